from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gclviews.graph import Graph, canonical_edges, load_dataset, load_tu_dataset, toy_dataset_path

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parents[1]
MUTAG_DIR = ROOT / "data" / "MUTAG"


@pytest.fixture(scope="session")
def mutag():
    return load_tu_dataset(MUTAG_DIR)


@pytest.fixture(scope="session")
def toy():
    return load_dataset(toy_dataset_path())


def random_graph(rng, n, p=0.3, feat=4, label=None):
    iu, ju = np.triu_indices(n, k=1)
    m = rng.random(iu.size) < p
    return Graph(rng.normal(size=(n, feat)), canonical_edges(np.stack([iu[m], ju[m]]), n), label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
