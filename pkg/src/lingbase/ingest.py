"""Parsers and writers for the on-disk formats, script binarization and
multi-script / multi-source aggregation."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (
    DEFAULT_PREFIX_RULES,
    FeatureMatrix,
    LanguageRecord,
    SourceLayeredMatrix,
    ValidationError,
    categorize_all,
    is_glottocode,
)

CATALOG_HEADER = (
    "glottocode", "iso639_3", "name", "parent_glottocode", "family_glottocode",
    "resource_level", "latitude", "longitude",
)
LANG_SCRIPTS_HEADER = ("language_code", "script_code")
MISSING_TOKENS = ("", "--")
UNKNOWN_TOKENS = ("", "unknown")
SCRIPT_CODE_RE = re.compile(r"^[A-Z][a-z]{3}$")


class IngestError(ValueError):
    """Malformed input file. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _open_text(path):
    return open(path, newline="", encoding="utf-8")


def _check_header(path, header, expected, exact=True):
    if header is None:
        raise IngestError("file is empty (no header)", path, 1)
    header = [h.strip() for h in header]
    if exact and tuple(header) != tuple(expected):
        raise IngestError(f"expected header {','.join(expected)}, got {','.join(header)}", path, 1)
    return header


# --- language catalog -------------------------------------------------------

def _opt(s: str) -> str | None:
    s = s.strip()
    return s or None


def parse_catalog(path) -> list[LanguageRecord]:
    """Read ``languages.csv`` into records sorted by glottocode.

    Dangling parent references are not checked here; see
    :func:`dangling_parents` and :func:`lingbase.phylogeny.build_phylogeny`.
    """
    records: dict[str, LanguageRecord] = {}
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), CATALOG_HEADER)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CATALOG_HEADER):
                raise IngestError(f"expected {len(CATALOG_HEADER)} fields, got {len(row)}", path, line)
            code, iso, name, parent, family, level, lat, lon = (c.strip() for c in row)
            try:
                rec = LanguageRecord(
                    code=code,
                    name=name,
                    parent=_opt(parent),
                    family=_opt(family),
                    resource_level=level or "unknown",
                    iso639_3=_opt(iso),
                    latitude=float(lat) if lat else None,
                    longitude=float(lon) if lon else None,
                )
            except ValueError as exc:
                raise IngestError(str(exc), path, line) from None
            if rec.code in records:
                raise IngestError(f"duplicate glottocode {rec.code}", path, line)
            records[rec.code] = rec
    return [records[c] for c in sorted(records)]


def dangling_parents(records: Iterable[LanguageRecord]) -> list[str]:
    """Warnings for parent links that point outside the catalog."""
    records = list(records)
    codes = {r.code for r in records}
    return [f"{r.code}: parent {r.parent} is not in the catalog"
            for r in records if r.parent is not None and r.parent not in codes]


def _fmt_float(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_catalog(records: Iterable[LanguageRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_HEADER)
        for r in sorted(records, key=lambda r: r.code):
            w.writerow([
                r.code, r.iso639_3 or "", r.name, r.parent or "", r.family or "",
                r.resource_level, _fmt_float(r.latitude), _fmt_float(r.longitude),
            ])


# --- scripts ----------------------------------------------------------------

@dataclass(frozen=True)
class ScriptRecord:
    script_code: str
    properties: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not SCRIPT_CODE_RE.match(self.script_code):
            raise ValidationError(f"invalid ISO 15924 script code {self.script_code!r}")
        object.__setattr__(self, "properties", dict(self.properties))


@dataclass(frozen=True)
class BinarizationSchema:
    """Ordered ``(property, {value: features})`` rules.

    A property's emitted set is the union of the features listed under any of
    its values; a known value asserts its listed features and zeroes the rest.
    """

    rules: tuple[tuple[str, Mapping[str, tuple[str, ...]]], ...]

    def __post_init__(self):
        rules = tuple((p, {v: tuple(fs) for v, fs in mapping.items()}) for p, mapping in self.rules)
        names = [p for p, _ in rules]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate property in binarization schema")
        for prop, mapping in rules:
            for value, feats in mapping.items():
                for f in feats:
                    if not f.startswith("SC_"):
                        raise ValidationError(f"{prop}={value}: feature {f!r} lacks the SC_ prefix")
        object.__setattr__(self, "rules", rules)

    def property_features(self, prop: str) -> tuple[str, ...]:
        for p, mapping in self.rules:
            if p == prop:
                out: list[str] = []
                for feats in mapping.values():
                    out.extend(f for f in feats if f not in out)
                return tuple(out)
        raise KeyError(prop)

    @property
    def emitted_features(self) -> tuple[str, ...]:
        out: list[str] = []
        for p, _ in self.rules:
            out.extend(f for f in self.property_features(p) if f not in out)
        return tuple(out)

    @classmethod
    def from_dict(cls, data: Mapping) -> "BinarizationSchema":
        props = data.get("properties", data)
        return cls(tuple((p, {str(v): tuple(fs) for v, fs in m.items()}) for p, m in props.items()))

    def to_dict(self) -> dict:
        return {"properties": {p: {v: list(fs) for v, fs in m.items()} for p, m in self.rules}}


def load_schema(path) -> BinarizationSchema:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"invalid schema JSON: {exc.msg}", path, exc.lineno) from None
    try:
        return BinarizationSchema.from_dict(data)
    except (ValidationError, AttributeError, TypeError) as exc:
        raise IngestError(f"invalid schema: {exc}", path) from None


def default_schema() -> BinarizationSchema:
    text = resources.files("lingbase").joinpath("data/default_schema.json").read_text("utf-8")
    return BinarizationSchema.from_dict(json.loads(text))


def parse_scripts(path) -> list[ScriptRecord]:
    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = _check_header(path, next(reader, None), (), exact=False)
        if not header or header[0] != "script_code":
            raise IngestError("first column must be script_code", path, 1)
        props = header[1:]
        if len(set(props)) != len(props):
            raise IngestError("duplicate property column", path, 1)
        records: dict[str, ScriptRecord] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", path, line)
            code = row[0].strip()
            try:
                rec = ScriptRecord(code, {p: v.strip() for p, v in zip(props, row[1:])})
            except ValidationError as exc:
                raise IngestError(str(exc), path, line) from None
            if code in records:
                raise IngestError(f"duplicate script code {code}", path, line)
            records[code] = rec
    return [records[c] for c in sorted(records)]


def binarize_scripts(scripts: Sequence[ScriptRecord], schema: BinarizationSchema) -> FeatureMatrix:
    """One row per script, one column per schema-emitted feature.

    Raises IngestError for a property value that has no rule and is not an
    unknown token.
    """
    scripts = sorted(scripts, key=lambda s: s.script_code)
    features = sorted(schema.emitted_features)
    col = {f: j for j, f in enumerate(features)}
    values = np.full((len(scripts), len(features)), np.nan)
    for i, s in enumerate(scripts):
        for prop, mapping in schema.rules:
            raw = s.properties.get(prop)
            if raw is None or raw.strip().lower() in UNKNOWN_TOKENS:
                continue
            raw = raw.strip()
            if raw not in mapping:
                raise IngestError(f"script {s.script_code}: no rule for {prop}={raw!r}")
            for f in schema.property_features(prop):
                values[i, col[f]] = 0.0
            for f in mapping[raw]:
                values[i, col[f]] = 1.0
    return FeatureMatrix.from_array([s.script_code for s in scripts], features, values, "binary")


@dataclass(frozen=True)
class LanguageScriptMap:
    entries: Mapping[str, frozenset[str]]
    unresolved: tuple[str, ...] = ()

    def validate(self, script_codes: Iterable[str]) -> None:
        known = set(script_codes)
        for lang, codes in self.entries.items():
            bad = sorted(set(codes) - known)
            if bad:
                raise ValidationError(f"{lang}: unknown script(s) {', '.join(bad)}")


def parse_lang_scripts(path, catalog: Sequence[LanguageRecord] | None = None) -> LanguageScriptMap:
    """Read ``lang_scripts.csv``. Language keys may be glottocodes or ISO 639-3
    codes; with a catalog, ISO codes are resolved and unknown languages are
    reported in ``unresolved`` instead of being kept."""
    by_iso = {r.iso639_3: r.code for r in catalog or () if r.iso639_3}
    known = {r.code for r in catalog} if catalog is not None else None
    entries: dict[str, set[str]] = {}
    unresolved: list[str] = []
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), LANG_SCRIPTS_HEADER)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise IngestError(f"expected 2 fields, got {len(row)}", path, line)
            lang, script = row[0].strip(), row[1].strip()
            if not SCRIPT_CODE_RE.match(script):
                raise IngestError(f"invalid script code {script!r}", path, line)
            code = lang if is_glottocode(lang) else by_iso.get(lang)
            if code is None and known is None and re.match(r"^[a-z]{3}$", lang):
                code = lang
            if code is None or (known is not None and code not in known):
                unresolved.append(f"line {line}: language {lang!r} not in catalog")
                continue
            entries.setdefault(code, set()).add(script)
    return LanguageScriptMap({k: frozenset(v) for k, v in sorted(entries.items())}, tuple(unresolved))


def project_scripts_to_languages(script_matrix: FeatureMatrix, mapping: LanguageScriptMap,
                                 languages: Sequence[str] | None = None) -> FeatureMatrix:
    """Language rows as the logical OR over the rows of their scripts.

    ``languages`` defaults to the languages in the map; those without an entry
    get all-missing rows.
    """
    if script_matrix.mode != "binary":
        raise ValidationError("script matrix must be binary-mode")
    mapping.validate(script_matrix.languages)
    langs = sorted(languages if languages is not None else mapping.entries)
    srow = {c: i for i, c in enumerate(script_matrix.languages)}
    values = np.full((len(langs), len(script_matrix.features)), np.nan)
    for i, lang in enumerate(langs):
        codes = sorted(mapping.entries.get(lang, ()))
        if not codes:
            continue
        idx = [srow[c] for c in codes]
        values[i] = _union_rows(script_matrix.values[idx], script_matrix.observed[idx])
    return FeatureMatrix.from_array(langs, script_matrix.features, values, "binary",
                                    script_matrix.categories)


def _union_rows(vals: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Column-wise OR over stacked rows: 1 if any 1, else 0 if any 0, else NaN."""
    any_one = (obs & (vals == 1.0)).any(axis=0)
    any_obs = obs.any(axis=0)
    return np.where(any_one, 1.0, np.where(any_obs, 0.0, np.nan))


def aggregate_union(layers: SourceLayeredMatrix) -> FeatureMatrix:
    ms = [layers.layers[s] for s in layers.sources]
    if any(m.mode != "binary" for m in ms):
        raise ValidationError("union aggregation requires binary-mode layers")
    vals = np.stack([m.values for m in ms])
    obs = np.stack([m.observed for m in ms])
    first = ms[0]
    return FeatureMatrix.from_array(first.languages, first.features, _union_rows(vals, obs),
                                    "binary", first.categories)


def aggregate_average(layers: SourceLayeredMatrix) -> FeatureMatrix:
    ms = [layers.layers[s] for s in layers.sources]
    first = ms[0]
    obs = np.stack([m.observed for m in ms])
    vals = np.where(obs, np.stack([m.values for m in ms]), 0.0)
    count = obs.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, vals.sum(axis=0) / np.maximum(count, 1), np.nan)
    # the mean of values in [0,1] can drift past the bounds by an ulp
    mean = np.where(count > 0, np.clip(mean, 0.0, 1.0), np.nan)
    return FeatureMatrix.from_array(first.languages, first.features, mean, "continuous",
                                    first.categories)


# --- feature matrices ---------------------------------------------------------

def read_features(path, mode: str | None = None,
                  prefix_rules=DEFAULT_PREFIX_RULES) -> FeatureMatrix:
    """Read a ``features_<source>.csv`` file into a sorted matrix.

    Mode is inferred when not given: binary iff every observed token is
    literally ``0`` or ``1``.
    """
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = _check_header(path, next(reader, None), (), exact=False)
        if not header or header[0] != "code":
            raise IngestError("first column must be 'code'", path, 1)
        features = header[1:]
        if len(set(features)) != len(features):
            raise IngestError("duplicate feature column", path, 1)
        codes: list[str] = []
        rows: list[list[float]] = []
        all_binary_tokens = True
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", path, line)
            code = row[0].strip()
            if not code:
                raise IngestError("empty language code", path, line)
            if code in codes:
                raise IngestError(f"duplicate language code {code}", path, line)
            parsed = []
            for f, tok in zip(features, row[1:]):
                tok = tok.strip()
                if tok in MISSING_TOKENS:
                    parsed.append(np.nan)
                    continue
                if tok not in ("0", "1"):
                    all_binary_tokens = False
                try:
                    x = float(tok)
                except ValueError:
                    raise IngestError(f"{code}/{f}: unparseable cell {tok!r}", path, line) from None
                if not 0.0 <= x <= 1.0:
                    raise IngestError(f"{code}/{f}: value {tok} outside [0,1]", path, line)
                parsed.append(x)
            codes.append(code)
            rows.append(parsed)
    if mode is None:
        mode = "binary" if all_binary_tokens else "continuous"
    values = np.array(rows, dtype=np.float64).reshape(len(codes), len(features))
    if mode == "binary":
        bad = ~np.isnan(values) & (values != 0.0) & (values != 1.0)
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            raise IngestError(f"{codes[i]}/{features[j]}: non-binary value in binary matrix", path)
    m = FeatureMatrix.from_array(codes, features, values, mode, categorize_all(features, prefix_rules))
    return m.sorted()


def _fmt_cell(x: float, observed: bool, mode: str) -> str:
    if not observed:
        return ""
    if mode == "binary":
        return "1" if x == 1.0 else "0"
    return repr(float(x))


def write_features(m: FeatureMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", *m.features])
        for i, code in enumerate(m.languages):
            w.writerow([code, *(_fmt_cell(x, o, m.mode)
                                for x, o in zip(m.values[i].tolist(), m.observed[i].tolist()))])


def source_name(path) -> str:
    """``features_wals.csv`` -> ``wals``."""
    stem = Path(path).stem
    return stem[len("features_"):] if stem.startswith("features_") else stem
