import pytest

from lingbase.fixtures import FixtureSpec, write_bundle


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    """A 60-language, 12-feature genealogical bundle shared by the CLI tests."""
    out = tmp_path_factory.mktemp("bundle")
    return write_bundle(out, FixtureSpec(n_languages=60, n_features=12, n_families=6, n_isolates=2))
