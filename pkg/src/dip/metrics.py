"""Ranking and classification metrics, Dirichlet energy, and the report record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import CSR


def ranks(pos, neg) -> np.ndarray:
    """Rank of each positive among its negatives; ties count half."""
    pos = np.asarray(pos, dtype=float).reshape(-1)
    neg = np.asarray(neg, dtype=float)
    if neg.ndim != 2 or neg.shape[0] != pos.shape[0]:
        raise ValueError("need one row of negatives per query")
    if neg.shape[1] == 0:
        raise ValueError("k must be positive")
    above = (neg > pos[:, None]).sum(axis=1)
    tied = (neg == pos[:, None]).sum(axis=1)
    return 1.0 + above + tied / 2.0


def rank_metrics(pos, neg) -> tuple[float, float, float]:
    """(MRR, Hits@1, Hits@10) over the queries."""
    r = ranks(pos, neg)
    if r.size == 0:
        raise ValueError("no queries")
    return float(np.mean(1.0 / r)), float(np.mean(r <= 1)), float(np.mean(r <= 10))


def classification_metrics(preds, labels, mask=None, num_classes: int | None = None) -> tuple[float, float]:
    """Accuracy and macro-F1 on the masked entries.

    Classes absent from both predictions and labels contribute an F1 of 0.
    """
    preds, labels = np.asarray(preds), np.asarray(labels)
    if mask is not None:
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        preds, labels = preds[idx], labels[idx]
    if preds.size == 0:
        raise ValueError("empty mask")
    c = num_classes or int(max(preds.max(), labels.max())) + 1
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    tp = np.diag(conf).astype(float)
    denom = conf.sum(axis=0) + conf.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros(c), where=denom > 0)
    return float(tp.sum() / conf.sum()), float(f1.mean())


def dirichlet_energy(Z, adjacency: CSR) -> float:
    """Mean squared embedding difference over undirected edges (0 if edgeless)."""
    Z = np.asarray(Z, dtype=np.float64)
    e = adjacency.edges()
    if len(e) == 0:
        return 0.0
    d = Z[e[:, 0]] - Z[e[:, 1]]
    return float(np.einsum("ij,ij->", d, d) / len(e))


@dataclass
class MetricsReport:
    variant: str = "full"
    split: str = "test"
    mrr: float | None = None
    hits_at_1: float | None = None
    hits_at_10: float | None = None
    accuracy: float | None = None
    macro_f1: float | None = None
    dirichlet_by_depth: list[tuple[int, float]] = field(default_factory=list)
    wall_time_s: float | None = None
    peak_bytes: int | None = None
    config_hash: str | None = None
    flags: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["hits@1"] = d.pop("hits_at_1")
        d["hits@10"] = d.pop("hits_at_10")
        return json.dumps(d, indent=2, sort_keys=True)
