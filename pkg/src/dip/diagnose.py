"""Depth-wise Dirichlet energy and pseudo-node proximity heatmaps."""

from __future__ import annotations

import csv

import numpy as np

from .graph import MultimodalGraph
from .metrics import dirichlet_energy
from .model import ModelConfig, as_tensors, embed
from .pathways import FULL, MODALITIES, AblationFlags, Trace

__all__ = ["energy_by_depth", "local_only", "pathway_heatmaps", "sample_nodes",
           "write_energy_csv", "write_heatmap_csv"]


def local_only(flags: AblationFlags) -> AblationFlags:
    return AblationFlags(**{**flags.to_dict(), "use_global": False})


def energy_by_depth(graph: MultimodalGraph, params, cfg: ModelConfig, flags: AblationFlags = FULL,
                    depths=(1, 2, 4, 8)) -> list[tuple[int, float]]:
    """Dirichlet energy of the fused embeddings when the recurrence is unrolled to each depth."""
    p = as_tensors(params)
    return [(L, dirichlet_energy(embed(graph, p, cfg, flags, L=L).data, graph.adjacency)) for L in depths]


def sample_nodes(n: int, k: int, seed: int) -> np.ndarray:
    return np.sort(np.random.default_rng(seed).choice(n, size=min(k, n), replace=False))


def pathway_heatmaps(graph: MultimodalGraph, params, cfg: ModelConfig, flags: AblationFlags,
                     nodes: np.ndarray) -> dict[str, np.ndarray | None]:
    """Raw first-step graph-to-pseudo proximities, n_p x len(nodes) per modality.

    ``None`` marks a modality without a pseudo pathway under ``flags``.
    """
    trace = Trace()
    embed(graph, as_tensors(params), cfg, flags, L=1, trace=trace)
    return {m: trace.w_gp_raw[m][:, nodes] if m in trace.w_gp_raw else None for m in MODALITIES}


def write_energy_csv(path, rows: list[tuple[int, float]], seed: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth", "energy", "seed"])
        for depth, e in rows:
            w.writerow([depth, repr(e), seed])


def write_heatmap_csv(path, W: np.ndarray | None, nodes: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pseudo"] + [f"node_{int(v)}" for v in nodes])
        if W is None:
            return
        for i, row in enumerate(W):
            w.writerow([i] + [repr(float(x)) for x in row])
