import sys
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

sys.path.insert(0, str(Path(__file__).parent))

from dip.graph import MultimodalGraph, build_adjacency  # noqa: E402
from dip.model import ModelConfig, init_params  # noqa: E402


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    with threadpool_limits(1):
        yield


def random_graph(n, d_v=5, d_t=4, p_edge=0.2, seed=0, classes=None):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p_edge
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    labels = rng.integers(0, classes, n) if classes else None
    return MultimodalGraph(build_adjacency(edges, n), rng.normal(size=(n, d_v)), rng.normal(size=(n, d_t)),
                           labels, classes)


def unit_scale(params, seed=0):
    """Perturb lambda and pseudo banks so every pathway carries O(1) signal."""
    rng = np.random.default_rng(seed + 1000)
    out = dict(params)
    for k, v in params.items():
        if k.endswith(".lam"):
            out[k] = rng.uniform(0.5, 1.5, v.shape)
        elif k.endswith(".H"):
            out[k] = rng.normal(size=v.shape)
        elif k.rsplit(".", 1)[1].startswith("b"):
            out[k] = rng.normal(0, 0.1, v.shape)
    return out


def small_model(graph, seed=0, task="link-prediction", **kw):
    kw.setdefault("d_s", 8)
    kw.setdefault("tau", 2)
    kw.setdefault("n_p_v", 3)
    kw.setdefault("n_p_t", 2)
    cfg = ModelConfig(d_v=graph.d_v, d_t=graph.d_t, task=task, **kw)
    return cfg, unit_scale(init_params(cfg, seed), seed)


@pytest.fixture
def tiny():
    g = random_graph(12, seed=1)
    cfg, params = small_model(g)
    return g, cfg, params


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[name])
