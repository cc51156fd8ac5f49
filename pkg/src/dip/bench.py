"""Forward-pass scaling benchmark against a dense attention baseline."""

from __future__ import annotations

import csv
import gc
import time
import tracemalloc
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, as_tensors, embed, init_params
from .proximity import StateProjector, embed_nodes
from .synth import SynthConfig, gen_graph

__all__ = ["ScalingRow", "bench_graph", "dense_attention", "fit_slope", "run_bench", "write_rows"]


@dataclass
class ScalingRow:
    method: str
    n: int
    n_p: int
    tau: int
    median_s: float
    peak_bytes: int
    trials: int
    skipped: bool = False


def bench_graph(n: int, avg_degree: float, d: int, seed: int = 0, blocks: int = 4):
    """SBM whose expected degree stays fixed as n grows (80% of edges intra-block)."""
    size = n / blocks
    p_in = min(1.0, 0.8 * avg_degree / max(size - 1, 1))
    p_out = min(p_in, 0.2 * avg_degree / max(n - size, 1))
    return gen_graph(SynthConfig(n=n, blocks=blocks, p_in=p_in, p_out=p_out, d_v=d, d_t=d, seed=seed))


def dense_attention(Z: np.ndarray) -> np.ndarray:
    """softmax(Z Z^T / sqrt(d)) Z with the full n x n score matrix."""
    S = Z @ Z.T / np.sqrt(Z.shape[1])
    S -= S.max(axis=1, keepdims=True)
    np.exp(S, out=S)
    S /= S.sum(axis=1, keepdims=True)
    return S @ Z


def _time(fn, repeats: int) -> tuple[float, int]:
    fn()  # warmup, discarded
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    gc.collect()
    tracemalloc.start()
    fn()
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return float(np.median(times)), int(peak)


def fit_slope(ns, ts) -> float:
    """Least-squares slope of log t against log n."""
    ns, ts = np.asarray(ns, dtype=float), np.asarray(ts, dtype=float)
    if ns.size < 2:
        raise ValueError("need at least two sizes")
    return float(np.polyfit(np.log(ns), np.log(ts), 1)[0])


def run_bench(sizes=(2000, 4000, 8000, 16000), dense_sizes=(500, 1000, 2000), n_p: int = 32, tau: int = 8,
              d_s: int = 64, L: int = 2, repeats: int = 5, avg_degree: float = 10.0,
              dense_budget_mb: float = 2048.0, seed: int = 0) -> tuple[list[ScalingRow], dict]:
    """Time one float32 forward per size; returns rows and fitted slopes."""
    rows = []
    for n in sizes:
        g = bench_graph(n, avg_degree, d_s, seed)
        cfg = ModelConfig(d_v=d_s, d_t=d_s, d_s=d_s, tau=tau, L=L, n_p_v=n_p, n_p_t=n_p, task="link-prediction")
        p = as_tensors(init_params(cfg, seed, np.float32))
        g.canonical  # ordering is a property of the graph, computed once
        g.canonical.mean_operator(np.float32)
        med, peak = _time(lambda: embed(g, p, cfg), repeats)
        rows.append(ScalingRow("dip", n, n_p, tau, med, peak, repeats))

    for n in dense_sizes:
        # score matrix plus exp/normalise temporaries
        if 3 * n * n * 4 / 2**20 > dense_budget_mb:
            rows.append(ScalingRow("dense", n, 0, 0, float("nan"), 0, 0, skipped=True))
            continue
        g = bench_graph(n, avg_degree, d_s, seed)
        params = init_params(ModelConfig(d_v=d_s, d_t=d_s, d_s=d_s, tau=tau, task="link-prediction"), seed, np.float32)
        Z0 = embed_nodes(Tensor(g.feat_v), StateProjector.from_params(as_tensors(params), "v.proj")).data
        med, peak = _time(lambda: dense_attention(Z0), repeats)
        rows.append(ScalingRow("dense", n, 0, 0, med, peak, repeats))

    slopes = {}
    for method in ("dip", "dense"):
        ok = [r for r in rows if r.method == method and not r.skipped]
        slopes[method] = fit_slope([r.n for r in ok], [r.median_s for r in ok]) if len(ok) >= 2 else None
    return rows, slopes


def write_rows(path, rows: list[ScalingRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(ScalingRow)])
        for r in rows:
            w.writerow(list(asdict(r).values()))
