import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lingbase.ingest import read_features, write_features
from lingbase.model import (
    CATEGORIES,
    DistanceMatrix,
    FeatureMatrix,
    LanguageRecord,
    SourceLayeredMatrix,
    ValidationError,
    categorize,
    expand_category,
    validate_matrix,
)

LANGS = ["abcd1234", "efgh5678"]


def test_validate_well_formed():
    m = FeatureMatrix.from_array(LANGS, ["S_A", "P_B"], [[0, 1], [1, np.nan]])
    assert validate_matrix(m) == []


def test_validate_binary_half():
    m = FeatureMatrix.from_array(LANGS, ["S_A", "P_B"], [[0, 0.5], [1, 1]])
    v = validate_matrix(m)
    assert len(v) == 1 and "binary" in v[0]


def test_validate_duplicate_feature():
    m = FeatureMatrix.from_array(LANGS, ["S_A", "S_A"], [[0, 1], [1, 0]])
    v = validate_matrix(m)
    assert len(v) == 1 and "uniqueness" in v[0]


def test_continuous_range():
    m = FeatureMatrix.from_array(LANGS, ["S_A"], [[0.25], [1.5]], mode="continuous")
    assert len(validate_matrix(m)) == 1


@pytest.mark.parametrize("name,cat", [
    ("S_ORDER", "syntactic"), ("P_TONE", "phonological"), ("INV_P", "inventory"),
    ("M_CASE", "morphological"), ("SC_ABJAD", "script"), ("GB020", "other"),
    ("s_lower", "other"),
])
def test_categorize(name, cat):
    assert categorize(name) == cat


def test_longest_prefix_wins():
    rules = (("S_", "syntactic"), ("SC_", "script"), ("S", "phonological"))
    assert categorize("SC_X", rules) == "script"
    assert categorize("S_X", rules) == "syntactic"
    assert categorize("SX", rules) == "phonological"


@given(st.text(alphabet="SCPIMNV_ABX", min_size=1, max_size=8))
def test_category_partition(name):
    # every name lands in exactly one known category
    assert sum(categorize(name) == c for c in CATEGORIES) == 1


def test_expand_category():
    assert expand_category("typological") == ("syntactic", "phonological", "inventory", "morphological")
    assert expand_category(None) == CATEGORIES
    with pytest.raises(ValueError):
        expand_category("semantic")


def test_record_validation():
    with pytest.raises(ValidationError):
        LanguageRecord("STAN1293")
    with pytest.raises(ValidationError):
        LanguageRecord("stan1293", resource_level="huge")
    r = LanguageRecord("stan1293")
    assert r.family == "stan1293"
    with pytest.raises(ValidationError):
        LanguageRecord("stan1293", parent="stan1293", family="stan1293")


def test_matrix_readonly_and_nan():
    m = FeatureMatrix(LANGS, ["S_A"], [[1.0], [0.0]], [[True], [False]])
    assert np.isnan(m.values[1, 0])
    assert m.cell("efgh5678", "S_A") is None
    with pytest.raises(ValueError):
        m.values[0, 0] = 0.0


def test_reindex_adds_missing_rows():
    m = FeatureMatrix.from_array(LANGS, ["S_A"], [[1.0], [0.0]])
    r = m.reindex(["zzzz0000", "abcd1234"])
    assert r.cell("abcd1234", "S_A") == 1.0
    assert not r.observed[0].any()


def test_layer_alignment():
    a = FeatureMatrix.from_array(["abcd1234"], ["S_A"], [[1.0]])
    b = FeatureMatrix.from_array(["efgh5678"], ["P_B"], [[0.0]])
    lay = SourceLayeredMatrix.align({"b": b, "a": a})
    assert lay.sources == ("a", "b")
    assert lay.languages == tuple(LANGS)
    assert lay.features == ("P_B", "S_A")


def test_distance_matrix_invariants():
    with pytest.raises(ValidationError):
        DistanceMatrix(LANGS, [[0, 0.2], [0.3, 0]])
    with pytest.raises(ValidationError):
        DistanceMatrix(LANGS, [[0.1, 0.2], [0.2, 0]])
    with pytest.raises(ValidationError):
        DistanceMatrix(LANGS, [[0, 1.2], [1.2, 0]])
    d = DistanceMatrix(LANGS, [[0, np.nan], [np.nan, 0]])
    assert d.get(*LANGS) is None


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 6), f=st.integers(1, 5), seed=st.integers(0, 2 ** 32 - 1), binary=st.booleans())
def test_csv_round_trip(n, f, seed, binary, tmp_path_factory):
    rng = np.random.default_rng(seed)
    langs = [f"lang{k:04d}" for k in range(n)]
    feats = [f"S_F{j}" for j in range(f)]
    vals = rng.integers(0, 2, (n, f)).astype(float) if binary else rng.random((n, f))
    vals[rng.random((n, f)) < 0.4] = np.nan
    mode = "binary" if binary else "continuous"
    m = FeatureMatrix.from_array(langs, feats, vals, mode)
    path = tmp_path_factory.mktemp("rt") / "features_x.csv"
    write_features(m, path)
    back = read_features(path, mode=mode)
    assert back.equals(m)
