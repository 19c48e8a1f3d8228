"""Normalised angular distance between language vectors and per-category distance matrices."""
from __future__ import annotations

import csv
import math
import numpy as np

from .model import DistanceMatrix, FeatureMatrix, ValidationError

BOTH_ZERO = "both_zero"
ONE_ZERO = "one_zero"


def _as_masked(v) -> tuple[np.ndarray, np.ndarray]:
    arr = np.array([np.nan if x is None else x for x in v], dtype=np.float64)
    obs = ~np.isnan(arr)
    return np.where(obs, arr, 0.0), obs


def _restricted(a: np.ndarray, b: np.ndarray, shared: np.ndarray):
    """Angular distance of two 2-D batches over their shared-observed columns.

    Returns (distance, flag) arrays; distance is NaN where nothing is shared,
    flag is 0 (regular), 1 (both vectors zero) or 2 (exactly one zero).
    """
    x = np.where(shared, a, 0.0)
    y = np.where(shared, b, 0.0)
    dot = (x * y).sum(axis=-1)
    nx = (x * x).sum(axis=-1)
    ny = (y * y).sum(axis=-1)
    any_shared = shared.any(axis=-1)
    zx, zy = nx == 0.0, ny == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        # sqrt(nx*ny) instead of sqrt(nx)*sqrt(ny) keeps cos exactly 1 for x == y
        cos = np.clip(dot / np.sqrt(nx * ny), -1.0, 1.0)
        dist = np.arccos(cos) / math.pi
    dist = np.where(zx & zy, 0.0, np.where(zx | zy, 1.0, dist))
    dist = np.where(any_shared, dist, np.nan)
    flag = np.where(any_shared & zx & zy, 1, np.where(any_shared & (zx ^ zy), 2, 0))
    return dist, flag


def angular_distance(a, b) -> float | None:
    """``arccos(a.b / (|a||b|)) / pi`` over the coordinates observed in both vectors.

    ``a`` and ``b`` are sequences where None or NaN marks a missing value.
    Returns None when the vectors share no observed coordinate. If both
    restricted vectors are all-zero the distance is 0.0; if exactly one is,
    it is 1.0.
    """
    xa, oa = _as_masked(a)
    xb, ob = _as_masked(b)
    if xa.shape != xb.shape:
        raise ValueError(f"vector lengths differ: {xa.size} vs {xb.size}")
    d, _ = _restricted(xa[None], xb[None], (oa & ob)[None])
    return None if np.isnan(d[0]) else float(d[0])


def distance_matrix(m: FeatureMatrix, category=None) -> DistanceMatrix:
    """Pairwise angular distances over the features of ``category``.

    Undefined pairs stay NaN. ``metadata`` records how many pairs fell under
    each zero-norm convention.
    """
    sub = m.select_features(category)
    if not sub.features:
        raise ValidationError(f"no features in category {category!r}")
    vals = np.where(sub.observed, sub.values, 0.0)
    obs = sub.observed
    n = len(sub.languages)
    out = np.full((n, n), np.nan)
    flags = np.zeros((n, n), dtype=np.int8)
    for i in range(n - 1):
        d, f = _restricted(vals[i][None, :], vals[i + 1:], obs[i][None, :] & obs[i + 1:])
        out[i, i + 1:] = d
        flags[i, i + 1:] = f
    iu = np.triu_indices(n, 1)
    out.T[iu] = out[iu]
    np.fill_diagonal(out, 0.0)
    meta = {
        "category": category if isinstance(category, str) or category is None else list(category),
        "n_features": len(sub.features),
        "n_undefined_pairs": int(np.isnan(out[iu]).sum()),
        "n_" + BOTH_ZERO: int((flags[iu] == 1).sum()),
        "n_" + ONE_ZERO: int((flags[iu] == 2).sum()),
        "conventions": {BOTH_ZERO: 0.0, ONE_ZERO: 1.0},
    }
    return DistanceMatrix(sub.languages, out, meta)


def write_distance_matrix(d: DistanceMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", *d.languages])
        for code, row in zip(d.languages, d.entries.tolist()):
            w.writerow([code, *("" if math.isnan(x) else repr(x) for x in row)])


def read_distance_matrix(path) -> DistanceMatrix:
    from .ingest import IngestError

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "code":
            raise IngestError("first column must be 'code'", path, 1)
        codes = [h.strip() for h in header[1:]]
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", path, reader.line_num)
            if row[0].strip() != codes[len(rows)]:
                raise IngestError("row labels must follow the header order", path, reader.line_num)
            try:
                rows.append([float(t) if t.strip() else np.nan for t in row[1:]])
            except ValueError:
                raise IngestError("unparseable distance", path, reader.line_num) from None
    try:
        return DistanceMatrix(codes, np.array(rows, dtype=np.float64).reshape(len(codes), len(codes)))
    except ValidationError as exc:
        raise IngestError(str(exc), path) from None


def upper_pairs(d: DistanceMatrix) -> np.ndarray:
    return d.entries[np.triu_indices(len(d.languages), 1)]


def common_languages(a: DistanceMatrix, b: DistanceMatrix) -> list[str]:
    bset = set(b.languages)
    return sorted(c for c in a.languages if c in bset)
