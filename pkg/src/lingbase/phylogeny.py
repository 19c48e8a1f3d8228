"""Parent/child forest over glottocodes and lineage imputation along it."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import FeatureMatrix, LanguageRecord, ValidationError


class PhylogenyError(ValidationError):
    pass


@dataclass(frozen=True)
class Phylogeny:
    nodes: frozenset[str]
    parent: Mapping[str, str]
    children: Mapping[str, tuple[str, ...]]
    roots: tuple[str, ...]

    def ancestors(self, code: str) -> list[str]:
        """Nearest first."""
        out = []
        p = self.parent.get(code)
        while p is not None:
            out.append(p)
            p = self.parent.get(p)
        return out

    def edges(self) -> list[tuple[str, str]]:
        """(parent, child) pairs in BFS order from the sorted roots."""
        out = []
        for root in self.roots:
            queue = deque([root])
            while queue:
                p = queue.popleft()
                for c in self.children.get(p, ()):
                    out.append((p, c))
                    queue.append(c)
        return out


def build_phylogeny(catalog: Iterable[LanguageRecord] | Mapping[str, str | None]) -> Phylogeny:
    """Build the forest from catalog records, or from a ``{code: parent}`` mapping.

    Raises PhylogenyError for parents missing from the catalog and for cycles.
    """
    if isinstance(catalog, Mapping):
        parent_of = dict(catalog)
    else:
        parent_of = {}
        for r in catalog:
            if r.code in parent_of:
                raise PhylogenyError(f"duplicate language {r.code}")
            parent_of[r.code] = r.parent
    nodes = frozenset(parent_of)
    orphans = sorted((c, p) for c, p in parent_of.items() if p is not None and p not in nodes)
    if orphans:
        desc = ", ".join(f"{p}->{c}" for c, p in orphans[:10])
        raise PhylogenyError(f"parent not in catalog for edge(s): {desc}")

    # every node must reach a parentless node; walk with path colouring
    state: dict[str, int] = {}  # 1 = on current path, 2 = known to reach a root
    for start in sorted(nodes):
        path = []
        node = start
        while node is not None and state.get(node) != 2:
            if state.get(node) == 1:
                cycle = path[path.index(node):] + [node]
                raise PhylogenyError("cycle detected: " + " -> ".join(cycle))
            state[node] = 1
            path.append(node)
            node = parent_of[node]
        for n in path:
            state[n] = 2

    children: dict[str, list[str]] = {}
    for c, p in parent_of.items():
        if p is not None:
            children.setdefault(p, []).append(c)
    return Phylogeny(
        nodes=nodes,
        parent={c: p for c, p in parent_of.items() if p is not None},
        children={p: tuple(sorted(cs)) for p, cs in sorted(children.items())},
        roots=tuple(sorted(c for c, p in parent_of.items() if p is None)),
    )


@dataclass(frozen=True)
class ImputationTrace:
    filled: int
    per_language: Mapping[str, int] = field(default_factory=dict)
    per_feature: Mapping[str, int] = field(default_factory=dict)

    def write_csv(self, language_path, feature_path) -> None:
        for path, head, counts in ((language_path, "language", self.per_language),
                                   (feature_path, "feature", self.per_feature)):
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([head, "fills"])
                for key in sorted(counts):
                    w.writerow([key, counts[key]])


def lineage_impute(m: FeatureMatrix, p: Phylogeny) -> tuple[FeatureMatrix, ImputationTrace]:
    """Copy observed parent cells into missing child cells, breadth-first from every root.

    Phylogeny nodes absent from ``m`` are added as all-missing rows first, so
    the output covers the sorted union of both language sets. Observed cells
    are never changed.
    """
    languages = sorted(set(m.languages) | p.nodes)
    base = m.reindex(languages)
    row = {c: i for i, c in enumerate(languages)}
    values = base.values.copy()
    observed = base.observed.copy()
    fills = np.zeros(values.shape, dtype=np.int64)

    visited: set[str] = set()
    for root in p.roots:
        queue = deque([root])
        visited.add(root)
        while queue:
            parent = queue.popleft()
            pi = row[parent]
            for child in p.children.get(parent, ()):
                if child in visited:
                    continue
                ci = row[child]
                take = observed[pi] & ~observed[ci]
                if take.any():
                    values[ci, take] = values[pi, take]
                    observed[ci, take] = True
                    fills[ci, take] = 1
                queue.append(child)
                visited.add(child)

    per_language = {c: int(fills[i].sum()) for i, c in enumerate(languages) if c in p.nodes}
    per_feature = {f: int(fills[:, j].sum()) for j, f in enumerate(m.features)}
    trace = ImputationTrace(int(fills.sum()), per_language, per_feature)
    return base.replace_cells(values, observed), trace


def parent_child_agreement(m: FeatureMatrix, p: Phylogeny, category=None) -> float | None:
    """Share of doubly-observed (edge, feature) cells where parent and child agree.

    Returns None when no such cell exists.
    """
    if m.mode != "binary":
        raise ValidationError("parent-child agreement needs a binary-mode matrix")
    cols = m.feature_indices(category)
    row = {c: i for i, c in enumerate(m.languages)}
    agree = total = 0
    for parent, child in p.edges():
        if parent not in row or child not in row:
            continue
        pi, ci = row[parent], row[child]
        both = m.observed[pi, cols] & m.observed[ci, cols]
        total += int(both.sum())
        agree += int((both & (m.values[pi, cols] == m.values[ci, cols])).sum())
    return agree / total if total else None


def families(catalog: Sequence[LanguageRecord]) -> dict[str, str]:
    return {r.code: r.family for r in catalog}
