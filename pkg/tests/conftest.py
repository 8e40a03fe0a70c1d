import numpy as np
import pytest
import torch

from tbclab.model import CLGNN, ModelConfig
from tbclab.temporal_graph import TemporalGraph, build_instance_index, random_temporal_graph


def tiny_config(**kw) -> ModelConfig:
    base = dict(d=8, d_T=4, d_P=8, d_h=8, heads=2, layers=2, neighbor_limit=5, seed=0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def chain():
    # a -> b -> c at times 1, 2
    return TemporalGraph.from_edges([(0, 1, 1), (1, 2, 2)])


@pytest.fixture
def small_graph():
    return random_temporal_graph(8, 20, 6, seed=3)


@pytest.fixture
def tiny_model():
    return CLGNN(tiny_config())


@pytest.fixture
def small_instance(small_graph):
    return small_graph, build_instance_index(small_graph)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    torch.manual_seed(0)
    yield


def brute_P(g, e):
    """Count of distinct departures from the head of edge ``e`` strictly after it."""
    v, t = g.dst[e], g.t[e]
    return len({float(x) for x in g.t[g.src == v] if x > t})


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
