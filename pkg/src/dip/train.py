"""Full-graph training and evaluation loops."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError
from .checkpoint import save_checkpoint
from .graph import MultimodalGraph, build_adjacency
from .metrics import MetricsReport, classification_metrics, rank_metrics
from .model import (ModelConfig, as_tensors, embed, init_params, loss_and_grads, lp_objective,
                    nc_objective, node_logits)
from .optim import AdamState, adam_step
from .pathways import FULL, AblationFlags
from .sampling import SplitSet, sample_negatives

log = logging.getLogger(__name__)


class DivergenceError(NonFiniteError):
    def __init__(self, epoch: int, cause: Exception):
        super().__init__(f"training diverged at epoch {epoch}: {cause}")
        self.epoch = epoch


@dataclass
class TrainSettings:
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 1
    patience: int = 30
    num_negatives: int = 1000


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    best_valid: float
    best_epoch: int
    rows: list[tuple[int, float, float]] = field(default_factory=list)


def message_graph(graph: MultimodalGraph, split: SplitSet) -> MultimodalGraph:
    """Graph whose adjacency may feed message passing for this split."""
    if split.task == "link-prediction":
        return graph.with_adjacency(build_adjacency(split.train, graph.n))
    return graph


def eval_negatives(graph: MultimodalGraph, split: SplitSet, which: str, k: int, seed: int) -> np.ndarray:
    """Frozen negative pool for the held-out edges of ``which``; drawn against the full graph."""
    anchors = getattr(split, which)
    k = min(k, graph.n - 1 - int(graph.adjacency.degree().max()) - 1)
    salt = {"valid": 1, "test": 2}[which]
    return sample_negatives(graph, anchors, max(k, 1), seed=seed * 7919 + salt)


def _lp_eval(graph_mp, params, cfg, flags, anchors, neg) -> tuple[float, float, float]:
    Z = embed(graph_mp, as_tensors(params), cfg, flags).data
    pos = np.einsum("ij,ij->i", Z[anchors[:, 0]], Z[anchors[:, 1]])
    negs = np.einsum("ij,ikj->ik", Z[anchors[:, 0]], Z[neg])
    return rank_metrics(pos, negs)


def _nc_eval(graph, params, cfg, flags, idx) -> tuple[float, float]:
    logits = node_logits(graph, as_tensors(params), cfg, flags).data
    return classification_metrics(logits.argmax(axis=1), graph.labels, idx, cfg.num_classes)


def train(graph: MultimodalGraph, split: SplitSet, cfg: ModelConfig, settings: TrainSettings,
          flags: AblationFlags = FULL, log_path=None, ckpt_path=None, meta=None) -> TrainResult:
    """Forward, loss, backward, Adam; checkpoint whenever validation strictly improves.

    The tracked validation metric is accuracy for node classification and
    MRR for link prediction. Stops early after ``patience`` evaluations
    without improvement.
    """
    gmp = message_graph(graph, split)
    params = init_params(cfg, settings.seed)
    state = AdamState(lr=settings.lr)
    if split.task == "link-prediction":
        valid_neg = eval_negatives(graph, split, "valid", settings.num_negatives, settings.seed)

    best, best_epoch, best_params, stale = -np.inf, -1, params, 0
    rows = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_metric"])
    try:
        for epoch in range(1, settings.epochs + 1):
            if split.task == "node-classification":
                closure = nc_objective(gmp, graph.labels, split.train, cfg, flags)
            else:
                negs = sample_negatives(gmp, split.train, 1, seed=settings.seed * 1_000_003 + epoch)[:, 0]
                neg_pairs = np.stack([split.train[:, 0], negs], axis=1)
                closure = lp_objective(gmp, split.train, neg_pairs, cfg, flags)
            valid = float("nan")
            try:
                loss, grads = loss_and_grads(closure, params)
                if not np.isfinite(loss):
                    raise NonFiniteError("loss is not finite")
                params, state = adam_step(params, grads, state)
                if epoch % settings.eval_every == 0:
                    if split.task == "node-classification":
                        valid = _nc_eval(gmp, params, cfg, flags, split.valid)[0]
                    else:
                        valid = _lp_eval(gmp, params, cfg, flags, split.valid, valid_neg)[0]
            except NonFiniteError as exc:
                raise DivergenceError(epoch, exc) from exc

            if epoch % settings.eval_every == 0:
                if valid > best:
                    best, best_epoch, best_params, stale = valid, epoch, params, 0
                    if ckpt_path is not None:
                        save_checkpoint(ckpt_path, params, {**(meta or {}), "epoch": epoch, "valid": valid})
                else:
                    stale += 1
            rows.append((epoch, loss, valid))
            if writer:
                writer.writerow([epoch, repr(loss), repr(valid)])
            log.debug("epoch %d loss %.6f valid %.4f", epoch, loss, valid)
            if stale >= settings.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    finally:
        if fh:
            fh.close()
    return TrainResult(params, best_params, best, best_epoch, rows)


def evaluate(graph: MultimodalGraph, split: SplitSet, params, cfg: ModelConfig, flags: AblationFlags = FULL,
             which: str = "test", num_negatives: int = 1000, seed: int = 0, variant: str = "full") -> MetricsReport:
    gmp = message_graph(graph, split)
    report = MetricsReport(variant=variant, split=which, flags=flags.to_dict())
    idx = getattr(split, which)
    if split.task == "node-classification":
        report.accuracy, report.macro_f1 = _nc_eval(gmp, params, cfg, flags, idx)
    else:
        neg = eval_negatives(graph, split, which, num_negatives, seed)
        report.mrr, report.hits_at_1, report.hits_at_10 = _lp_eval(gmp, params, cfg, flags, idx, neg)
    return report
