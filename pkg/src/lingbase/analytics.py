"""Coverage and sparsity statistics, Spearman/Mantel correlation tests and
evaluation metrics."""
from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from ._rng import substream
from .model import (
    RESOURCE_LEVELS,
    DistanceMatrix,
    FeatureMatrix,
    LanguageRecord,
    expand_category,
)

ALL_LEVELS = "all"
SCOPES = ("covered", "all")
# relative slack when comparing permuted statistics against the observed one,
# so that relabelings which reproduce the same value count as ties
TIE_RTOL = 1e-12


def worker_count() -> int:
    raw = os.environ.get("LINGBASE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def format_table(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Plain-text table with right-aligned numeric columns."""
    def fmt(x):
        if x is None:
            return "-"
        if isinstance(x, float):
            return f"{x:.4f}"
        return str(x)

    body = [[fmt(x) for x in r] for r in rows]
    widths = [max(len(h), *(len(r[k]) for r in body)) if body else len(h)
              for k, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    for r in body:
        lines.append("  ".join(c.rjust(w) if k else c.ljust(w)
                               for k, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in r])


# --- coverage and sparsity ------------------------------------------------------

def _levels(m: FeatureMatrix, catalog: Iterable[LanguageRecord] | Mapping[str, str]) -> np.ndarray:
    if isinstance(catalog, Mapping):
        level_of = dict(catalog)
    else:
        level_of = {r.code: r.resource_level for r in catalog}
    return np.array([level_of.get(c, "unknown") for c in m.languages], dtype=object)


def _present_categories(m: FeatureMatrix, category) -> list[str]:
    return [c for c in expand_category(category) if any(m.categories[f] == c for f in m.features)]


@dataclass(frozen=True)
class CoverageReport:
    """Languages with at least one observed cell, keyed by (category, resource level)."""

    counts: Mapping[tuple[str, str], int]

    def rows(self):
        return [(c, lvl, n) for (c, lvl), n in sorted(self.counts.items())]


def coverage(m: FeatureMatrix, catalog, category=None) -> CoverageReport:
    levels = _levels(m, catalog)
    counts: dict[tuple[str, str], int] = {}
    for cat in _present_categories(m, category):
        covered = m.observed[:, m.feature_indices(cat)].any(axis=1)
        for lvl in RESOURCE_LEVELS:
            counts[(cat, lvl)] = int((covered & (levels == lvl)).sum())
        counts[(cat, ALL_LEVELS)] = int(covered.sum())
    return CoverageReport(counts)


@dataclass(frozen=True)
class SparsityReport:
    """Missing-cell fraction keyed by (category, resource level); None when no row is in scope."""

    fractions: Mapping[tuple[str, str], float | None]
    scope: str = "covered"

    def rows(self):
        return [(c, lvl, v) for (c, lvl), v in sorted(self.fractions.items())]


def sparsity(m: FeatureMatrix, catalog, category=None, scope: str = "covered") -> SparsityReport:
    """Missing cells / total cells over in-scope rows and the category's columns.

    ``scope="covered"`` keeps rows with at least one observed cell in the
    category; ``scope="all"`` keeps every row.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    levels = _levels(m, catalog)
    out: dict[tuple[str, str], float | None] = {}
    for cat in _present_categories(m, category):
        obs = m.observed[:, m.feature_indices(cat)]
        in_scope = obs.any(axis=1) if scope == "covered" else np.ones(len(m.languages), bool)
        for lvl in (*RESOURCE_LEVELS, ALL_LEVELS):
            rows = in_scope if lvl == ALL_LEVELS else in_scope & (levels == lvl)
            total = int(rows.sum()) * obs.shape[1]
            out[(cat, lvl)] = None if total == 0 else 1.0 - int(obs[rows].sum()) / total
    return SparsityReport(out, scope)


def sparsity_reduction(before: SparsityReport, after: SparsityReport) -> dict[tuple[str, str], float | None]:
    """Relative decrease in sparsity, (before - after) / before."""
    out = {}
    for key, b in before.fractions.items():
        a = after.fractions.get(key)
        out[key] = None if b is None or a is None or b == 0 else (b - a) / b
    return out


# --- correlation ----------------------------------------------------------------

def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    xc = x - x.mean()
    yc = y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0.0:
        return None
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))


def spearman(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Pearson correlation of average-tie ranks; None for n < 3 or constant input."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("spearman inputs differ in length")
    if a.size < 3:
        return None
    return _pearson(rankdata(a), rankdata(b))


def bonferroni(alpha_family: float, m_tests: int) -> float:
    if m_tests < 1:
        raise ValueError("m_tests must be at least 1")
    return alpha_family / m_tests


class MantelError(ValueError):
    pass


@dataclass(frozen=True)
class MantelResult:
    rho_obs: float
    p_value: float
    n_permutations: int
    exceed_count: int
    blocks_used: int
    singleton_blocks: int
    n_pairs: int
    alpha_corrected: float
    significant: bool
    seed: int | None = None

    def census(self) -> str:
        return f"{self.blocks_used} blocks, {self.singleton_blocks} singletons"

    def to_dict(self) -> dict:
        return {
            "rho": self.rho_obs,
            "p_value": self.p_value,
            "n_permutations": self.n_permutations,
            "exceed_count": self.exceed_count,
            "n_pairs": self.n_pairs,
            "blocks": self.blocks_used,
            "singleton_blocks": self.singleton_blocks,
            "alpha_corrected": self.alpha_corrected,
            "significant": self.significant,
            "seed": self.seed,
        }


def block_groups(languages: Sequence[str], blocks: Mapping[str, str]) -> list[np.ndarray]:
    """Position arrays of each exchangeability block, ordered by block label."""
    groups: dict[str, list[int]] = {}
    for i, code in enumerate(languages):
        if code not in blocks:
            raise MantelError(f"language {code} has no block assignment")
        groups.setdefault(blocks[code], []).append(i)
    return [np.array(groups[k], dtype=np.intp) for k in sorted(groups)]


def block_permutation(groups: Sequence[np.ndarray], n: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffle positions within each block; singleton blocks stay put."""
    perm = np.arange(n)
    for idx in groups:
        if idx.size > 1:
            perm[idx] = idx[rng.permutation(idx.size)]
    return perm


def enumerate_block_permutations(groups: Sequence[np.ndarray], n: int,
                                 include_identity: bool = True) -> list[np.ndarray]:
    """Every within-block relabeling (product of per-block permutations)."""
    per_block = [list(itertools.permutations(idx.tolist())) for idx in groups]
    out = []
    for combo in itertools.product(*per_block):
        perm = np.arange(n)
        for idx, shuffled in zip(groups, combo):
            perm[idx] = shuffled
        out.append(perm)
    if not include_identity:
        ident = np.arange(n)
        out = [p for p in out if not np.array_equal(p, ident)]
    return out


class _MantelStat:
    """Spearman statistic of A against relabeled B over jointly defined pairs."""

    def __init__(self, a: np.ndarray, b: np.ndarray):
        n = a.shape[0]
        self.iu = np.triu_indices(n, 1)
        self.a_up = a[self.iu]
        self.def_a = ~np.isnan(self.a_up)
        self.b = b
        self.full = bool(self.def_a.all()) and not np.isnan(b[self.iu]).any()
        if self.full:
            # every relabeling keeps all pairs, so ranks only move around
            ra = rankdata(self.a_up)
            self.ra_c = ra - ra.mean()
            rb = np.zeros_like(b)
            rb[self.iu] = rankdata(b[self.iu])
            rb = rb + rb.T
            self.rb = rb
            self.rb_mean = float(rankdata(b[self.iu]).mean())
            self.den = math.sqrt(float(self.ra_c @ self.ra_c)
                                 * float(((rb[self.iu] - self.rb_mean) ** 2).sum()))

    def __call__(self, perm: np.ndarray) -> tuple[float | None, int]:
        i, j = perm[self.iu[0]], perm[self.iu[1]]
        if self.full:
            if self.den == 0.0:
                return None, self.a_up.size
            rho = float((self.ra_c @ (self.rb[i, j] - self.rb_mean)) / self.den)
            return float(np.clip(rho, -1.0, 1.0)), self.a_up.size
        bv = self.b[i, j]
        keep = self.def_a & ~np.isnan(bv)
        if keep.sum() < 3:
            return None, int(keep.sum())
        return spearman(self.a_up[keep], bv[keep]), int(keep.sum())


def mantel_block(a: DistanceMatrix, b: DistanceMatrix, blocks: Mapping[str, str],
                 n_perm: int = 999, seed: int = 0, alpha: float = 0.05,
                 permutations: Sequence[np.ndarray] | None = None) -> MantelResult:
    """Two-sided Mantel test on Spearman's rho with within-block relabeling of ``b``.

    Permutation ``k`` draws from its own substream of ``seed``, so the result
    does not depend on evaluation order or thread count. Explicit
    ``permutations`` (position arrays) replace the random draws. The p-value
    is ``(1 + #{|rho_perm| >= |rho_obs|}) / (1 + n_perm)``; ``alpha`` is the
    already-corrected threshold.
    """
    if set(a.languages) != set(b.languages) or len(a.languages) != len(b.languages):
        raise MantelError("distance matrices cover different languages")
    if b.languages != a.languages:
        b = b.reindex(a.languages)
    n = len(a.languages)
    groups = block_groups(a.languages, blocks)
    stat = _MantelStat(a.entries, b.entries)
    rho_obs, n_pairs = stat(np.arange(n))
    if n_pairs < 3:
        raise MantelError(f"only {n_pairs} jointly defined pairs; need at least 3")
    if rho_obs is None:
        raise MantelError("spearman correlation undefined (constant ranks)")

    if permutations is None:
        if n_perm < 1:
            raise MantelError("n_perm must be positive")

        def draw(k):
            return block_permutation(groups, n, substream(seed, "mantel", k))
        perm_iter = range(n_perm)
    else:
        permutations = [np.asarray(p, dtype=np.intp) for p in permutations]
        n_perm = len(permutations)

        def draw(k):
            return permutations[k]
        perm_iter = range(n_perm)

    threshold = abs(rho_obs) * (1.0 - TIE_RTOL)

    def count(ks):
        c = 0
        for k in ks:
            rho, _ = stat(draw(k))
            if rho is not None and abs(rho) >= threshold:
                c += 1
        return c

    workers = min(worker_count(), 8)
    ks = list(perm_iter)
    if workers > 1 and not stat.full and n_perm >= 64:
        chunks = [ks[w::workers] for w in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            exceed = sum(pool.map(count, chunks))
    else:
        exceed = count(ks)

    p = (1 + exceed) / (1 + n_perm)
    return MantelResult(
        rho_obs=rho_obs,
        p_value=p,
        n_permutations=n_perm,
        exceed_count=exceed,
        blocks_used=len(groups),
        singleton_blocks=sum(1 for g in groups if g.size == 1),
        n_pairs=n_pairs,
        alpha_corrected=alpha,
        significant=p < alpha,
        seed=seed if permutations is None else None,
    )


# --- evaluation metrics ----------------------------------------------------------

@dataclass(frozen=True)
class BinaryMetrics:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    tp: int
    fp: int
    fn: int
    tn: int


def binary_metrics(pred: Sequence[int], truth: Sequence[int]) -> BinaryMetrics:
    """Confusion-matrix metrics with 1 as the positive class.

    Precision, recall and F1 are None when their denominator is zero.
    """
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError("pred and truth differ in length")
    if p.size == 0:
        raise ValueError("binary_metrics needs at least one pair")
    p = p == 1
    t = t == 1
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    tn = int((~p & ~t).sum())
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return BinaryMetrics((tp + tn) / p.size, precision, recall, f1, tp, fp, fn, tn)


@dataclass(frozen=True)
class RegressionMetrics:
    rmse: float
    mae: float


def regression_metrics(pred: Sequence[float], truth: Sequence[float]) -> RegressionMetrics:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("pred and truth differ in length")
    if p.size == 0:
        raise ValueError("regression_metrics needs at least one pair")
    err = p - t
    return RegressionMetrics(float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err))))


def ndcg_at_k(ranking: Sequence[str], relevance: Mapping[str, float], k: int) -> float:
    """NDCG with gain ``2**rel - 1`` and discount ``log2(rank + 1)``.

    ``k`` larger than the ranking is truncated to its length; returns 0.0
    when the ideal DCG is zero.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    k = min(k, len(ranking))
    gains = [relevance[c] for c in ranking]
    if any(g < 0 for g in gains):
        raise ValueError("relevance must be non-negative")

    def dcg(rels):
        return sum((2.0 ** r - 1.0) / math.log2(i + 2) for i, r in enumerate(rels[:k]))

    ideal = dcg(sorted(gains, reverse=True))
    return 0.0 if ideal == 0 else dcg(gains) / ideal
