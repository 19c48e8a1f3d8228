"""Deterministic synthetic bundles in the on-disk input formats.

The genealogical bundle mimics the structure the pipeline expects from real
sources: a forest of language families where each child copies its parent's
feature vector with a fraction of features flipped, most cells unobserved,
observations split across two typological sources, and script assignments
inherited along the same trees.
"""
from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import substream
from .ingest import default_schema, write_catalog
from .model import LanguageRecord

SCRIPT_TABLE = {
    # code: (Type, Case, Ligatures)
    "Arab": ("Abjad", "No", "Required"),
    "Hebr": ("Abjad", "No", "None"),
    "Latn": ("Alphabet", "Yes", "Optional"),
    "Cyrl": ("Alphabet", "Yes", "None"),
    "Grek": ("Alphabet", "Yes", "None"),
    "Deva": ("Abugida", "No", "Required"),
    "Ethi": ("Abugida", "No", "None"),
    "Hang": ("Featural", "No", "None"),
    "Hani": ("Logo-syllabary", "No", "None"),
    "Cans": ("Syllabary", "No", ""),
    "Cher": ("Syllabary", "Unknown", "None"),
}

TYPOLOGICAL_PREFIXES = (("S_", 15), ("P_", 10), ("INV_", 10), ("M_", 5))


@dataclass(frozen=True)
class FixtureSpec:
    n_languages: int = 500
    n_features: int = 40
    n_families: int = 30
    n_isolates: int = 6
    noise: float = 0.10
    missing: float = 0.60
    script_coverage: float = 0.75
    seed: int = 0


def _feature_names(n: int) -> list[str]:
    total = sum(k for _, k in TYPOLOGICAL_PREFIXES)
    names = []
    for prefix, k in TYPOLOGICAL_PREFIXES:
        k = max(1, round(k * n / total))
        names.extend(f"{prefix}F{j + 1:02d}" for j in range(k))
    return names[:n] if len(names) >= n else names + [f"S_X{j:02d}" for j in range(n - len(names))]


def _codes(n: int, rng) -> list[str]:
    letters = np.array(list(string.ascii_lowercase))
    seen: set[str] = set()
    out = []
    while len(out) < n:
        stem = "".join(rng.choice(letters, 4))
        code = f"{stem}{1234 + len(out):04d}"
        if code not in seen:
            seen.add(code)
            out.append(code)
    return out


def generate(spec: FixtureSpec = FixtureSpec()):
    """Return (catalog, truth, observed, script_sets, feature_names, depths)."""
    rng = substream(spec.seed, "fixture")
    n = spec.n_languages
    codes = _codes(n, rng)
    n_roots = spec.n_families + spec.n_isolates
    parent: list[int | None] = [None] * n
    family = list(range(n))
    depth = [0] * n
    # families grow as random recursive trees; isolates never get children
    growable = list(range(spec.n_families))
    for k in range(n_roots, n):
        p = int(rng.choice(growable))
        parent[k] = p
        family[k] = family[p]
        depth[k] = depth[p] + 1
        growable.append(k)

    feats = _feature_names(spec.n_features)
    f = len(feats)
    prototypes = rng.random((4, f)) < 0.45
    truth = np.zeros((n, f), dtype=bool)
    for k in range(n):
        if parent[k] is None:
            proto = prototypes[rng.integers(4)]
            truth[k] = proto ^ (rng.random(f) < 0.15)
        else:
            truth[k] = truth[parent[k]] ^ (rng.random(f) < spec.noise)
    observed = rng.random((n, f)) >= spec.missing

    scripts = sorted(SCRIPT_TABLE)
    script_sets: list[set[str]] = [set() for _ in range(n)]
    for k in range(n):
        if parent[k] is None:
            script_sets[k] = {scripts[int(rng.integers(len(scripts)))]}
        else:
            s = set(script_sets[parent[k]])
            u = rng.random()
            if u < 0.05:
                s = {scripts[int(rng.integers(len(scripts)))]}
            elif u < 0.10:
                s.add(scripts[int(rng.integers(len(scripts)))])
            script_sets[k] = s
    has_script = rng.random(n) < spec.script_coverage

    levels = rng.choice(["high", "medium", "low", "unknown"], size=n, p=[0.02, 0.08, 0.85, 0.05])
    centers = rng.uniform([-50, -170], [60, 170], size=(n, 2))
    catalog = []
    for k in range(n):
        fam = family[k]
        lat, lon = centers[fam] + rng.normal(0, 3, 2)
        catalog.append(LanguageRecord(
            code=codes[k],
            name=f"Language {k}",
            parent=codes[parent[k]] if parent[k] is not None else None,
            family=codes[fam],
            resource_level=str(levels[k]),
            iso639_3=_iso(k) if k % 3 == 0 else None,
            latitude=round(float(np.clip(lat, -90, 90)), 4),
            longitude=round(float(np.clip(lon, -180, 180)), 4),
        ))
    script_sets = [s if has_script[k] else set() for k, s in enumerate(script_sets)]
    return catalog, truth, observed, script_sets, feats, depth


def _iso(k: int) -> str:
    a = string.ascii_lowercase
    return "q" + a[(k // 26) % 26] + a[k % 26]


def genetic_distances(catalog: list[LanguageRecord]) -> tuple[list[str], np.ndarray]:
    """Tree-path distance: 1 across families, else 1 - shared lineage length / longer lineage length."""
    codes = [r.code for r in catalog]
    parent = {r.code: r.parent for r in catalog}
    lineage = {}
    for c in codes:
        path = [c]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        lineage[c] = path[::-1]
    n = len(codes)
    d = np.ones((n, n))
    for i in range(n):
        li = lineage[codes[i]]
        for j in range(i + 1, n):
            lj = lineage[codes[j]]
            if li[0] != lj[0]:
                continue
            shared = 0
            for x, y in zip(li, lj):
                if x != y:
                    break
                shared += 1
            d[i, j] = d[j, i] = 1.0 - shared / max(len(li), len(lj))
    np.fill_diagonal(d, 0.0)
    return codes, d


def write_bundle(out_dir, spec: FixtureSpec = FixtureSpec()) -> dict[str, Path]:
    """Write the bundle files and return their paths keyed by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog, truth, observed, script_sets, feats, _ = generate(spec)
    rng = substream(spec.seed, "fixture-sources")
    codes = [r.code for r in catalog]

    paths = {
        "catalog": out / "languages.csv",
        "scripts": out / "scripts.tsv",
        "lang_scripts": out / "lang_scripts.csv",
        "schema": out / "binarization_schema.json",
        "features_wals": out / "features_wals.csv",
        "features_grambank": out / "features_grambank.csv",
        "genetic": out / "distances_genetic.csv",
        "truth": out / "truth.csv",
    }
    write_catalog(catalog, paths["catalog"])

    with open(paths["scripts"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["script_code", "Type", "Case", "Ligatures", "Direction"])
        for code in sorted(SCRIPT_TABLE):
            w.writerow([code, *SCRIPT_TABLE[code], "RTL" if code in ("Arab", "Hebr") else "LTR"])

    iso_of = {r.code: r.iso639_3 for r in catalog}
    with open(paths["lang_scripts"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["language_code", "script_code"])
        for k, code in enumerate(codes):
            key = iso_of[code] if iso_of[code] and k % 2 == 0 else code
            for s in sorted(script_sets[k]):
                w.writerow([key, s])

    paths["schema"].write_text(json.dumps(default_schema().to_dict(), indent=2) + "\n", "utf-8")

    # each observed cell lands in wals, grambank or both; grambank sometimes disagrees
    u = rng.random(observed.shape)
    in_wals = observed & (u < 0.60)
    in_gram = observed & (u >= 0.45)
    flip = rng.random(observed.shape) < 0.05
    wals_vals = truth.astype(float)
    gram_vals = np.where(in_wals & in_gram & flip, 1.0 - truth, truth).astype(float)
    for key, mask, vals in (("features_wals", in_wals, wals_vals), ("features_grambank", in_gram, gram_vals)):
        rows = [k for k in range(len(codes)) if mask[k].any()]
        with open(paths[key], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["code", *feats])
            for k in rows:
                w.writerow([codes[k], *(("1" if vals[k, j] else "0") if mask[k, j] else ("--" if (k + j) % 7 == 0 else "")
                                        for j in range(len(feats)))])

    with open(paths["truth"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", *feats])
        for k, code in enumerate(codes):
            w.writerow([code, *("1" if x else "0" for x in truth[k])])

    gcodes, gd = genetic_distances(catalog)
    with open(paths["genetic"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", *gcodes])
        for code, row in zip(gcodes, gd.tolist()):
            w.writerow([code, *(repr(x) for x in row)])
    return paths


