"""Library-level pipeline steps shared by the command-line front end."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ._rng import substream
from .analytics import (
    MantelResult,
    binary_metrics,
    bonferroni,
    mantel_block,
    regression_metrics,
)
from .completion import (
    CompletionConfig,
    complete_matrix,
    hidden_predictions,
    make_holdout,
)
from .distances import common_languages
from .ingest import (
    aggregate_average,
    aggregate_union,
    binarize_scripts,
    dangling_parents,
    default_schema,
    load_schema,
    parse_catalog,
    parse_lang_scripts,
    parse_scripts,
    project_scripts_to_languages,
    read_features,
    source_name,
)
from .model import (
    DEFAULT_PREFIX_RULES,
    DistanceMatrix,
    FeatureMatrix,
    LanguageRecord,
    SourceLayeredMatrix,
    validate_matrix,
)
from .phylogeny import ImputationTrace, Phylogeny, build_phylogeny, lineage_impute

SCRIPT_SOURCE = "scriptsource"
# vector groups scored separately, matching the typ/scr rows of the evaluation report
VECTOR_GROUPS = (("typ", "typological"), ("scr", "script"))
METHODS = ("lineage", "softimpute", "lineage+softimpute")
AGGREGATIONS = ("union", "average")


@dataclass
class Dataset:
    catalog: list[LanguageRecord]
    layers: dict[str, FeatureMatrix]
    warnings: list[str] = field(default_factory=list)

    @property
    def languages(self) -> list[str]:
        codes = {r.code for r in self.catalog}
        for m in self.layers.values():
            codes.update(m.languages)
        return sorted(codes)

    def phylogeny(self) -> Phylogeny:
        return build_phylogeny(self.catalog)

    def families(self) -> dict[str, str]:
        return {r.code: r.family for r in self.catalog}

    def aggregate(self, agg: str) -> FeatureMatrix:
        """Union (binary) or average (continuous) over all sources, one row per known language."""
        if agg not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        layered = SourceLayeredMatrix.align(self.layers)
        m = aggregate_union(layered) if agg == "union" else aggregate_average(layered)
        return m.reindex(self.languages)


def ingest_sources(catalog_path, feature_paths: Sequence = (), scripts_path=None,
                   lang_scripts_path=None, schema_path=None,
                   prefix_rules=DEFAULT_PREFIX_RULES) -> Dataset:
    """Parse every input file into a :class:`Dataset`; hard errors raise."""
    catalog = parse_catalog(catalog_path)
    build_phylogeny(catalog)
    warnings = dangling_parents(catalog)
    layers: dict[str, FeatureMatrix] = {}
    for path in feature_paths:
        name = source_name(path)
        if name in layers or name == SCRIPT_SOURCE:
            raise ValueError(f"duplicate feature source {name!r}")
        layers[name] = read_features(path, prefix_rules=prefix_rules)
    if scripts_path is not None:
        if lang_scripts_path is None:
            raise ValueError("a script table needs a language-script map")
        schema = load_schema(schema_path) if schema_path else default_schema()
        script_matrix = binarize_scripts(parse_scripts(scripts_path), schema)
        mapping = parse_lang_scripts(lang_scripts_path, catalog)
        warnings.extend(mapping.unresolved)
        layers[SCRIPT_SOURCE] = project_scripts_to_languages(script_matrix, mapping)
    known = {r.code for r in catalog}
    for name, m in sorted(layers.items()):
        violations = validate_matrix(m)
        if violations:
            raise ValueError(f"source {name}: {violations[0]}")
        extra = sorted(set(m.languages) - known)
        if extra:
            warnings.append(f"source {name}: {len(extra)} language(s) not in catalog, e.g. {extra[0]}")
    return Dataset(catalog, layers, warnings)


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    catalog = parse_catalog(d / "languages.csv")
    layers = {source_name(p): read_features(p) for p in sorted(d.glob("features_*.csv"))}
    return Dataset(catalog, layers)


def validation_report(ds: Dataset) -> str:
    lines = [f"languages: {len(ds.catalog)}", f"families: {len({r.family for r in ds.catalog})}"]
    for name, m in sorted(ds.layers.items()):
        lines.append(f"source {name}: {len(m.languages)} languages x {len(m.features)} features, "
                     f"{m.mode}, {m.n_observed} observed cells")
    lines.extend(f"warning: {w}" for w in ds.warnings)
    return "\n".join(lines) + "\n"


def complete_groups(m: FeatureMatrix, config: CompletionConfig) -> tuple[FeatureMatrix, dict]:
    """Run SoftImpute separately on each vector group (and on uncategorised features)."""
    values = m.values.copy()
    observed = m.observed.copy()
    info = {}
    groups = [*VECTOR_GROUPS, ("other", "other")]
    for label, category in groups:
        cols = m.feature_indices(category)
        if cols.size == 0 or not m.observed[:, cols].any():
            continue
        sub = FeatureMatrix(m.languages, [m.features[j] for j in cols], m.values[:, cols],
                            m.observed[:, cols], m.mode, m.categories)
        done, res = complete_matrix(sub, config)
        values[:, cols] = done.values
        observed[:, cols] = done.observed
        info[label] = res.summary()
    return m.replace_cells(values, observed), info


@dataclass
class ImputeOutput:
    matrices: dict[str, FeatureMatrix]
    trace: ImputationTrace | None = None
    completion: dict = field(default_factory=dict)


def impute(ds: Dataset, method: str, config: CompletionConfig) -> ImputeOutput:
    """Lineage imputation, SoftImpute, or lineage first and SoftImpute after."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    out = ImputeOutput({})
    phylo = ds.phylogeny() if "lineage" in method else None
    for agg in AGGREGATIONS:
        m = ds.aggregate(agg)
        if phylo is not None:
            m, trace = lineage_impute(m, phylo)
            if agg == "union":
                out.trace = trace
        if "softimpute" in method:
            m, info = complete_groups(m, config)
            out.completion[agg] = info
        out.matrices[agg] = m
    return out


@dataclass
class EvalRow:
    stage: str
    vector: str
    n_hidden: int
    metrics: object


def evaluate(ds: Dataset, agg: str, holdout: float, seed: int, config: CompletionConfig,
             stages: Sequence[str] = ("-lineage", "+lineage")) -> list[EvalRow]:
    """Hide a fraction of known cells, impute, and score the hidden cells.

    Both stages share one mask per vector group so their scores compare the
    same cells. Union aggregation is scored with classification metrics,
    average aggregation with RMSE/MAE.
    """
    base = ds.aggregate(agg)
    phylo = ds.phylogeny()
    rows: list[EvalRow] = []
    for label, category in VECTOR_GROUPS:
        sub = base.select_features(category)
        if not sub.features or sub.n_observed < 5:
            continue
        mask_seed = int(substream(seed, "eval-holdout", label).integers(2 ** 63))
        masked, mask = make_holdout(sub, holdout, mask_seed)
        for stage in stages:
            m = masked
            if stage == "+lineage":
                m, _ = lineage_impute(masked, phylo)
                m = m.reindex(masked.languages)
            done, _ = complete_matrix(m, config)
            pred = hidden_predictions(done, mask)
            if agg == "union":
                metrics = binary_metrics(pred.astype(int), mask.truth.astype(int))
            else:
                metrics = regression_metrics(pred, mask.truth)
            rows.append(EvalRow(stage, label, len(mask.hidden), metrics))
    return rows


def correlate(matrix: DistanceMatrix, against: DistanceMatrix, families: dict[str, str],
              n_perm: int, seed: int, alpha_family: float, m_tests: int) -> MantelResult:
    """Mantel test over the languages both matrices share; unknown languages form their own block."""
    common = common_languages(matrix, against)
    a = matrix.reindex(common)
    b = against.reindex(common)
    blocks = {c: families.get(c, c) for c in common}
    return mantel_block(a, b, blocks, n_perm=n_perm, seed=seed,
                        alpha=bonferroni(alpha_family, m_tests))


def metrics_row(row: EvalRow) -> list:
    m = row.metrics
    if hasattr(m, "f1"):
        return [row.stage, row.vector, row.n_hidden, m.accuracy, m.precision, m.recall, m.f1]
    return [row.stage, row.vector, row.n_hidden, m.rmse, m.mae]


def eval_header(agg: str) -> list[str]:
    if agg == "union":
        return ["stage", "vector", "hidden", "accuracy", "precision", "recall", "f1"]
    return ["stage", "vector", "hidden", "rmse", "mae"]

