"""Stochastic-block-model graphs with modality-split class signal."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .graph import MultimodalGraph, build_adjacency


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2000
    blocks: int = 4
    p_in: float = 0.01
    p_out: float = 0.001
    d_v: int = 32
    d_t: int = 32
    signal_split: float = 0.5
    noise_sigma: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.blocks < 2:
            raise ConfigError("need at least two blocks")
        if self.n < self.blocks:
            raise ConfigError("fewer nodes than blocks")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ConfigError("need 0 <= p_out <= p_in <= 1")
        if not 0.0 <= self.signal_split <= 1.0:
            raise ConfigError("signal_split must lie in [0, 1]")
        if self.d_v < 1 or self.d_t < 1:
            raise ConfigError("feature dims must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown synth keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def visual_classes(self) -> int:
        return int(round(self.signal_split * self.blocks))


def block_sizes(n: int, blocks: int) -> np.ndarray:
    sizes = np.full(blocks, n // blocks)
    sizes[: n % blocks] += 1
    return sizes


def _tri_decode(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Strict-lower-triangle index -> (row, col) with col < row."""
    r = np.floor((1 + np.sqrt(1 + 8 * t.astype(np.float64))) / 2).astype(np.int64)
    # guard against float rounding at triangle boundaries
    r -= (r * (r - 1) // 2 > t)
    r += ((r + 1) * r // 2 <= t)
    return r, t - r * (r - 1) // 2


def _sample_pairs(rng: np.random.Generator, total: int, p: float) -> np.ndarray:
    if total == 0 or p == 0.0:
        return np.empty(0, dtype=np.int64)
    m = rng.binomial(total, p)
    return np.sort(rng.choice(total, size=m, replace=False)).astype(np.int64)


def sbm_edges(rng: np.random.Generator, sizes: np.ndarray, p_in: float, p_out: float) -> np.ndarray:
    """Edge list of an SBM; every pair is drawn independently."""
    starts = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for a in range(len(sizes)):
        b_a = int(sizes[a])
        t = _sample_pairs(rng, b_a * (b_a - 1) // 2, p_in)
        r, c = _tri_decode(t)
        out.append(np.stack([c + starts[a], r + starts[a]], axis=1))
        for b in range(a + 1, len(sizes)):
            b_b = int(sizes[b])
            t = _sample_pairs(rng, b_a * b_b, p_out)
            out.append(np.stack([t // b_b + starts[a], t % b_b + starts[b]], axis=1))
    return np.concatenate(out) if out else np.empty((0, 2), dtype=np.int64)


def class_means(rng: np.random.Generator, classes: int, dim: int) -> np.ndarray:
    """Unit-norm class centers; orthonormal whenever dim >= classes."""
    g = rng.standard_normal((dim, classes))
    if dim >= classes:
        q, _ = np.linalg.qr(g)
        return q.T.copy()
    return (g / np.linalg.norm(g, axis=0)).T.copy()


def gen_graph(cfg: SynthConfig) -> MultimodalGraph:
    rng = np.random.default_rng(cfg.seed)
    sizes = block_sizes(cfg.n, cfg.blocks)
    labels = np.repeat(np.arange(cfg.blocks), sizes)
    edges = sbm_edges(rng, sizes, cfg.p_in, cfg.p_out)

    mean_v = class_means(rng, cfg.blocks, cfg.d_v)
    mean_t = class_means(rng, cfg.blocks, cfg.d_t)
    visual = labels < cfg.visual_classes
    feat_v = cfg.noise_sigma * rng.standard_normal((cfg.n, cfg.d_v))
    feat_t = cfg.noise_sigma * rng.standard_normal((cfg.n, cfg.d_t))
    feat_v[visual] += mean_v[labels[visual]]
    feat_t[~visual] += mean_t[labels[~visual]]
    return MultimodalGraph(build_adjacency(edges, cfg.n), feat_v.astype(np.float32),
                           feat_t.astype(np.float32), labels, cfg.blocks)


def gen_synthetic(cfg: SynthConfig, task: str = "node-classification", ratios=None):
    """SBM graph plus a deterministic split for ``task``.

    Default ratios are 6/1/3 for node classification and 8/1/1 for links.
    """
    from .sampling import split_edges, split_nodes

    graph = gen_graph(cfg)
    if task == "node-classification":
        split = split_nodes(graph.n, ratios or (0.6, 0.1, 0.3), cfg.seed)
    elif task == "link-prediction":
        split, _ = split_edges(graph, ratios or (0.8, 0.1, 0.1), cfg.seed)
    else:
        raise ConfigError(f"unknown task {task!r}")
    return graph, split


def expected_intra_edges(cfg: SynthConfig) -> tuple[float, float]:
    """Mean and standard deviation of the intra-block edge count."""
    pairs = sum(math.comb(int(b), 2) for b in block_sizes(cfg.n, cfg.blocks))
    return pairs * cfg.p_in, math.sqrt(pairs * cfg.p_in * (1 - cfg.p_in))
