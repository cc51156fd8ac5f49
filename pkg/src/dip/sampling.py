"""Train/valid/test splits and negative sampling for link prediction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import CSR, MultimodalGraph, build_adjacency

TASKS = ("link-prediction", "node-classification")


class DensityError(RuntimeError):
    """No valid negative could be drawn within the retry budget."""


@dataclass(frozen=True, eq=False)
class SplitSet:
    task: str
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def to_json(self) -> dict:
        return {"task": self.task, "seed": int(self.seed),
                "train": self.train.tolist(), "valid": self.valid.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> SplitSet:
        shape = (-1, 2) if d["task"] == "link-prediction" else (-1,)
        arrs = [np.asarray(d[k], dtype=np.int64).reshape(shape) for k in ("train", "valid", "test")]
        return cls(d["task"], *arrs, seed=int(d["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> SplitSet:
        return cls.from_json(json.loads(Path(path).read_text()))


def _counts(total: int, ratios) -> tuple[int, int, int]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0:
        raise ValueError("ratios must be three non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios sum to {sum(ratios)!r}, expected 1")
    n_train = int(round(ratios[0] * total))
    n_valid = min(int(round(ratios[1] * total)), total - n_train)
    return n_train, n_valid, total - n_train - n_valid


def split_edges(graph: MultimodalGraph, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[SplitSet, CSR]:
    """Shuffle undirected edges and partition them.

    The returned adjacency holds train edges only, so held-out edges never
    feed message passing.
    """
    edges = graph.adjacency.edges()
    a, b, _ = _counts(len(edges), ratios)
    perm = np.random.default_rng(seed).permutation(len(edges))
    e = edges[perm]
    split = SplitSet("link-prediction", e[:a], e[a:a + b], e[a + b:], seed)
    return split, build_adjacency(split.train, graph.n)


def split_nodes(n: int, ratios=(0.6, 0.1, 0.3), seed: int = 0) -> SplitSet:
    a, b, _ = _counts(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitSet("node-classification", np.sort(perm[:a]), np.sort(perm[a:a + b]),
                    np.sort(perm[a + b:]), seed)


def _pair_keys(u: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    lo, hi = np.minimum(u, w), np.maximum(u, w)
    return lo * n + hi


def sample_negatives(graph: MultimodalGraph | CSR, anchors, k: int, seed: int = 0,
                     max_rounds: int = 200) -> np.ndarray:
    """For each anchor (u, v), ``k`` destinations w with w != u and (u, w) not an edge.

    Pairs listed in ``anchors`` are excluded as well. Invalid draws are
    resampled uniformly until valid or ``max_rounds`` is exhausted.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    adj = graph.adjacency if isinstance(graph, MultimodalGraph) else graph
    n = adj.n
    anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
    e = adj.edges()
    forbidden = np.unique(np.concatenate([_pair_keys(e[:, 0], e[:, 1], n),
                                          _pair_keys(anchors[:, 0], anchors[:, 1], n)]))

    # a source with no admissible partner can never succeed
    partners = np.bincount(np.concatenate([forbidden // n, forbidden % n]), minlength=n)
    src = anchors[:, 0]
    full = partners[src] >= n - 1
    if full.any():
        raise DensityError(f"node {int(src[full][0])} is paired with every other node; no negative exists")

    rng = np.random.default_rng(seed)
    out = rng.integers(0, n, size=(len(anchors), k))
    u = np.broadcast_to(src[:, None], out.shape)
    bad = (out == u) | np.isin(_pair_keys(u, out, n), forbidden)
    rounds = 0
    while bad.any():
        if rounds >= max_rounds:
            raise DensityError(f"{int(bad.sum())} negatives still invalid after {max_rounds} rounds; graph too dense")
        rows, cols = np.nonzero(bad)
        draw = rng.integers(0, n, size=len(rows))
        out[rows, cols] = draw
        bad[rows, cols] = (draw == src[rows]) | np.isin(_pair_keys(src[rows], draw, n), forbidden)
        rounds += 1
    return out
