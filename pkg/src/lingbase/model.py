"""Shared domain types: language records, feature matrices, distance matrices.

Missing cells are tracked by an explicit boolean ``observed`` mask. The value
array carries NaN at unobserved positions only as a convenience for numpy; all
logic branches on the mask.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

GLOTTOCODE_RE = re.compile(r"^[a-z0-9]{4}[0-9]{4}$")
ISO639_3_RE = re.compile(r"^[a-z]{3}$")

CATEGORIES = ("syntactic", "phonological", "inventory", "morphological", "script", "other")
TYPOLOGICAL = ("syntactic", "phonological", "inventory", "morphological")
RESOURCE_LEVELS = ("high", "medium", "low", "unknown")
MODES = ("binary", "continuous")

DEFAULT_PREFIX_RULES: tuple[tuple[str, str], ...] = (
    ("S_", "syntactic"),
    ("P_", "phonological"),
    ("INV_", "inventory"),
    ("M_", "morphological"),
    ("SC_", "script"),
)


class ValidationError(ValueError):
    """Raised when a domain object violates one of its invariants."""


def is_glottocode(code: str) -> bool:
    return bool(GLOTTOCODE_RE.match(code))


def categorize(feature: str, prefix_rules: Sequence[tuple[str, str]] = DEFAULT_PREFIX_RULES) -> str:
    """Return the category of ``feature`` by longest matching prefix, else ``other``."""
    best, best_len = "other", -1
    for prefix, category in prefix_rules:
        if feature.startswith(prefix) and len(prefix) > best_len:
            best, best_len = category, len(prefix)
    return best


def categorize_all(features: Iterable[str], prefix_rules=DEFAULT_PREFIX_RULES) -> dict[str, str]:
    return {f: categorize(f, prefix_rules) for f in features}


def expand_category(category: str | Sequence[str] | None) -> tuple[str, ...]:
    """Normalise a category filter into a tuple of category names.

    ``None`` or ``"all"`` selects everything, ``"typological"`` the four
    typological categories; a sequence is taken as-is.
    """
    if category is None or category == "all":
        return CATEGORIES
    if isinstance(category, str):
        if category == "typological":
            return TYPOLOGICAL
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        return (category,)
    cats = tuple(category)
    for c in cats:
        if c not in CATEGORIES:
            raise ValueError(f"unknown category {c!r}")
    return cats


@dataclass(frozen=True)
class LanguageRecord:
    code: str
    name: str = ""
    parent: str | None = None
    family: str | None = None
    resource_level: str = "unknown"
    iso639_3: str | None = None
    latitude: float | None = None
    longitude: float | None = None

    def __post_init__(self):
        if not is_glottocode(self.code):
            raise ValidationError(f"invalid glottocode {self.code!r}")
        if self.iso639_3 is not None and not ISO639_3_RE.match(self.iso639_3):
            raise ValidationError(f"{self.code}: invalid ISO 639-3 code {self.iso639_3!r}")
        if self.parent is not None:
            if not is_glottocode(self.parent):
                raise ValidationError(f"{self.code}: invalid parent glottocode {self.parent!r}")
            if self.parent == self.code:
                raise ValidationError(f"{self.code}: language is its own parent")
        if self.family is None:
            if self.parent is not None:
                raise ValidationError(f"{self.code}: family is required when a parent is given")
            object.__setattr__(self, "family", self.code)
        elif not is_glottocode(self.family):
            raise ValidationError(f"{self.code}: invalid family glottocode {self.family!r}")
        if self.parent is None and self.family != self.code:
            raise ValidationError(f"{self.code}: root language must be its own family")
        if self.resource_level not in RESOURCE_LEVELS:
            raise ValidationError(f"{self.code}: invalid resource level {self.resource_level!r}")
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"{self.code}: latitude {self.latitude} out of range")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"{self.code}: longitude {self.longitude} out of range")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Languages x features grid of optional cells.

    ``values`` is float64 with NaN wherever ``observed`` is False. Both arrays
    are read-only; derive new matrices with :meth:`replace_cells`.
    """

    languages: tuple[str, ...]
    features: tuple[str, ...]
    values: np.ndarray
    observed: np.ndarray
    mode: str = "binary"
    categories: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "languages", tuple(self.languages))
        object.__setattr__(self, "features", tuple(self.features))
        values = np.array(self.values, dtype=np.float64)
        observed = np.array(self.observed, dtype=bool)
        shape = (len(self.languages), len(self.features))
        if values.shape != shape or observed.shape != shape:
            raise ValidationError(
                f"grid shape {values.shape}/{observed.shape} does not match {shape}"
            )
        if self.mode not in MODES:
            raise ValidationError(f"unknown matrix mode {self.mode!r}")
        values[~observed] = np.nan
        cats = dict(self.categories)
        for f in self.features:
            cats.setdefault(f, categorize(f))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "observed", _readonly(observed))
        object.__setattr__(self, "categories", cats)

    @classmethod
    def from_array(cls, languages, features, values, mode="binary", categories=None):
        """Build from an array where NaN marks missing cells."""
        values = np.asarray(values, dtype=np.float64)
        return cls(languages, features, values, ~np.isnan(values), mode, categories or {})

    @classmethod
    def empty(cls, languages, features, mode="binary", categories=None):
        shape = (len(languages), len(features))
        return cls(languages, features, np.full(shape, np.nan), np.zeros(shape, bool), mode,
                   categories or {})

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_missing(self) -> int:
        return int(self.observed.size - self.observed.sum())

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def cell(self, language: str, feature: str) -> float | None:
        i = self.languages.index(language)
        j = self.features.index(feature)
        return float(self.values[i, j]) if self.observed[i, j] else None

    def row(self, language: str) -> np.ndarray:
        return self.values[self.languages.index(language)]

    def replace_cells(self, values, observed=None, mode=None) -> "FeatureMatrix":
        if observed is None:
            observed = ~np.isnan(values)
        return FeatureMatrix(self.languages, self.features, values, observed,
                             mode or self.mode, self.categories)

    def feature_indices(self, category=None) -> np.ndarray:
        cats = expand_category(category)
        return np.array([j for j, f in enumerate(self.features) if self.categories[f] in cats],
                        dtype=np.intp)

    def select_features(self, category=None) -> "FeatureMatrix":
        idx = self.feature_indices(category)
        feats = [self.features[j] for j in idx]
        return FeatureMatrix(self.languages, feats, self.values[:, idx], self.observed[:, idx],
                             self.mode, {f: self.categories[f] for f in feats})

    def reindex(self, languages: Sequence[str]) -> "FeatureMatrix":
        """Reorder/extend rows; languages not present become all-missing rows."""
        pos = {c: i for i, c in enumerate(self.languages)}
        values = np.full((len(languages), len(self.features)), np.nan)
        observed = np.zeros(values.shape, bool)
        for i, c in enumerate(languages):
            k = pos.get(c)
            if k is not None:
                values[i] = self.values[k]
                observed[i] = self.observed[k]
        return FeatureMatrix(languages, self.features, values, observed, self.mode, self.categories)

    def reindex_features(self, features: Sequence[str]) -> "FeatureMatrix":
        pos = {f: j for j, f in enumerate(self.features)}
        values = np.full((len(self.languages), len(features)), np.nan)
        observed = np.zeros(values.shape, bool)
        for j, f in enumerate(features):
            k = pos.get(f)
            if k is not None:
                values[:, j] = self.values[:, k]
                observed[:, j] = self.observed[:, k]
        cats = {f: self.categories.get(f, categorize(f)) for f in features}
        return FeatureMatrix(self.languages, features, values, observed, self.mode, cats)

    def sorted(self) -> "FeatureMatrix":
        """Rows by code, columns by feature name (the canonical ingestion order)."""
        return self.reindex(sorted(self.languages)).reindex_features(sorted(self.features))

    def equals(self, other: "FeatureMatrix") -> bool:
        """Cell-identical comparison (labels, mode, mask and observed values)."""
        return (
            self.languages == other.languages
            and self.features == other.features
            and self.mode == other.mode
            and np.array_equal(self.observed, other.observed)
            and np.array_equal(self.values[self.observed], other.values[other.observed])
        )


def validate_matrix(m: FeatureMatrix) -> list[str]:
    """Return a list of human-readable invariant violations; empty when valid."""
    violations: list[str] = []
    for axis, labels in (("language", m.languages), ("feature", m.features)):
        seen: set[str] = set()
        for k, label in enumerate(labels):
            if label in seen:
                violations.append(f"duplicate {axis} {label!r} at position {k}: uniqueness")
            seen.add(label)
    for f in m.features:
        if m.categories.get(f) not in CATEGORIES:
            violations.append(f"feature {f!r}: category {m.categories.get(f)!r} is not a known category")
    obs = m.observed
    vals = m.values
    if m.mode == "binary":
        bad = obs & (vals != 0.0) & (vals != 1.0)
        rule = "binary mode allows only 0/1"
    else:
        bad = obs & ~((vals >= 0.0) & (vals <= 1.0))
        rule = "continuous mode requires values in [0,1]"
    for i, j in zip(*np.nonzero(bad)):
        violations.append(
            f"row {m.languages[i]!r} column {m.features[j]!r}: value {vals[i, j]!r}: {rule}"
        )
    return violations


@dataclass(frozen=True, eq=False)
class SourceLayeredMatrix:
    """Per-source feature matrices sharing one language and feature index."""

    sources: tuple[str, ...]
    layers: Mapping[str, FeatureMatrix]

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if set(self.sources) != set(self.layers):
            raise ValidationError("sources and layers disagree")
        first = None
        for s in self.sources:
            layer = self.layers[s]
            if first is None:
                first = layer
            elif layer.languages != first.languages or layer.features != first.features:
                raise ValidationError(f"layer {s!r} is not aligned with {self.sources[0]!r}")

    @classmethod
    def align(cls, layers: Mapping[str, FeatureMatrix]) -> "SourceLayeredMatrix":
        """Align arbitrary layers onto the sorted union of their languages and features."""
        langs = sorted(set().union(*(m.languages for m in layers.values())))
        feats = sorted(set().union(*(m.features for m in layers.values())))
        aligned = {s: m.reindex(langs).reindex_features(feats) for s, m in layers.items()}
        return cls(tuple(sorted(layers)), aligned)

    @property
    def languages(self) -> tuple[str, ...]:
        return self.layers[self.sources[0]].languages

    @property
    def features(self) -> tuple[str, ...]:
        return self.layers[self.sources[0]].features


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric matrix of optional distances in [0,1]; NaN marks undefined entries."""

    languages: tuple[str, ...]
    entries: np.ndarray
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "languages", tuple(self.languages))
        e = np.array(self.entries, dtype=np.float64)
        n = len(self.languages)
        if e.shape != (n, n):
            raise ValidationError(f"distance matrix shape {e.shape} does not match {n} languages")
        if not np.array_equal(e, e.T, equal_nan=True):
            raise ValidationError("distance matrix is not symmetric")
        if np.any(np.diag(e) != 0.0):
            raise ValidationError("distance matrix diagonal must be 0")
        defined = ~np.isnan(e)
        if np.any((e[defined] < 0.0) | (e[defined] > 1.0)):
            raise ValidationError("distance outside [0,1]")
        object.__setattr__(self, "entries", _readonly(e))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.entries)

    def get(self, a: str, b: str) -> float | None:
        v = self.entries[self.languages.index(a), self.languages.index(b)]
        return None if np.isnan(v) else float(v)

    def reindex(self, languages: Sequence[str]) -> "DistanceMatrix":
        pos = {c: i for i, c in enumerate(self.languages)}
        missing = [c for c in languages if c not in pos]
        if missing:
            raise ValidationError(f"languages not in distance matrix: {missing[:5]}")
        idx = np.array([pos[c] for c in languages], dtype=np.intp)
        return DistanceMatrix(languages, self.entries[np.ix_(idx, idx)], self.metadata)
