import pytest

from chaintrace.cli import simulate_dataset
from chaintrace.dataset import load_manifest


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    simulate_dataset(root, 10, 96, seed=7)
    return root


@pytest.fixture(scope="session")
def entries(synthetic_dir):
    return load_manifest(synthetic_dir / "manifest.csv")
