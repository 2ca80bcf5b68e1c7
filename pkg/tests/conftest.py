import numpy as np
import pytest

from clustervax import io as cio
from clustervax.datagen_causal import PotentialWorld, WorldCluster, generate_world
from clustervax.datagen_margins import synthesize
from clustervax.trial_model import TrialDataset, make_cluster

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def margins_config():
    return cio.load_config("trial_margins")


@pytest.fixture(scope="session")
def reference_spec(margins_config):
    return cio.margin_spec(margins_config)


@pytest.fixture(scope="session")
def reference_dataset(reference_spec, margins_config):
    return synthesize(reference_spec, margins_config["seed"])


@pytest.fixture(scope="session")
def acceptance_world():
    return generate_world(cio.generative_config(cio.load_config("acceptance_world")))


@pytest.fixture(scope="session")
def null_world():
    return generate_world(cio.generative_config(cio.load_config("null_world")))


def world_cluster(cid, s, y1, y0, label=None):
    arr = [np.asarray(a, dtype=np.int8) for a in (s, y1, y0)]
    return WorldCluster(cid, label, *arr)


@pytest.fixture
def tiny_world():
    """Three clusters, at most six people each; every stratum non-empty."""
    return PotentialWorld((
        world_cluster("a", [1, 1, 0, 0, 0], [0, 1, 0, 0, 1], [1, 1, 0, 1, 1]),
        world_cluster("b", [1, 0, 1, 1, 0, 0], [0, 0, 0, 1, 0, 1], [1, 0, 1, 1, 0, 1]),
        world_cluster("c", [0, 1, 0, 1], [1, 0, 0, 0], [1, 1, 0, 0]),
    ))


def dataset_from_values(treated, control, size=10):
    """Clusters whose overall outcome equals each given value (value * size must be integral)."""
    clusters = []
    for arm, values in ((1, treated), (0, control)):
        for i, v in enumerate(values):
            events = round(v * size)
            assert abs(events - v * size) < 1e-9
            y = [1] * events + [0] * (size - events)
            clusters.append(make_cluster(f"{arm}-{i}", arm, [1] * size, y))
    return TrialDataset(tuple(clusters))
