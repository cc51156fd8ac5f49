"""Model hyperparameters, parameter initialisation and the end-to-end forward."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tape, Tensor, backward
from .graph import MultimodalGraph
from .heads import fuse, lp_logits, lp_loss_from_logits, nc_logits, nc_loss
from .pathways import FULL, MODALITIES, UPDATE_SITES, AblationFlags, Trace, dip_forward
from .proximity import NORMALIZE_MODES

TASKS = ("link-prediction", "node-classification")


@dataclass(frozen=True)
class ModelConfig:
    d_v: int
    d_t: int
    d_s: int = 32
    tau: int = 8
    L: int = 2
    n_p_v: int = 8
    n_p_t: int = 8
    normalize: str = "row-softmax"
    d_out: int | None = None
    num_classes: int | None = None
    task: str = "node-classification"

    def __post_init__(self):
        if self.tau < 1 or self.d_s % self.tau:
            raise ValueError(f"tau={self.tau} must be >= 1 and divide d_s={self.d_s}")
        if self.n_p_v < 1 or self.n_p_t < 1:
            raise ValueError("pseudo-node counts must be >= 1")
        if self.L < 0:
            raise ValueError("L must be non-negative")
        if self.normalize not in NORMALIZE_MODES:
            raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "node-classification" and (self.num_classes or 0) < 2:
            raise ValueError("node classification needs num_classes >= 2")

    @property
    def d(self) -> int:
        return self.d_out or self.d_s

    @property
    def d_c(self) -> int:
        return self.d_s // self.tau

    def n_p(self, m: str) -> int:
        return self.n_p_v if m == "v" else self.n_p_t

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    ds, d = cfg.d_s, cfg.d
    shapes = {}
    for m, d_in in (("v", cfg.d_v), ("t", cfg.d_t)):
        shapes |= {f"{m}.proj.w1": (d_in, ds), f"{m}.proj.b1": (1, ds),
                   f"{m}.proj.w2": (ds, ds), f"{m}.proj.b2": (1, ds),
                   f"{m}.H": (cfg.n_p(m), ds),
                   f"{m}.psi.w": (4 * ds, ds), f"{m}.psi.b": (1, ds)}
        for role in ("gp", "pp", "pg", "cross"):
            shapes |= {f"{m}.{role}.w": (ds, cfg.tau * cfg.d_c), f"{m}.{role}.b": (1, cfg.tau * cfg.d_c),
                       f"{m}.{role}.lam": (1, cfg.tau)}
        for site in UPDATE_SITES:
            shapes |= {f"{m}.{site}.w": (ds, ds), f"{m}.{site}.b": (1, ds)}
    shapes |= {"fuse.w": (2 * ds, d), "fuse.b": (1, d)}
    if cfg.task == "node-classification":
        shapes |= {"nc.w1": (d, d), "nc.b1": (1, d), "nc.w2": (d, cfg.num_classes), "nc.b2": (1, cfg.num_classes)}
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, lambda = 1/tau, H ~ N(0, 1/d_s)."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "H":
            out[name] = rng.normal(0.0, 1.0 / np.sqrt(cfg.d_s), size=shape)
        elif leaf == "lam":
            out[name] = np.full(shape, 1.0 / cfg.tau)
        elif leaf.startswith("b"):
            out[name] = np.zeros(shape)
        else:
            out[name] = _glorot(rng, *shape)
    return {k: v.astype(dtype) for k, v in out.items()}


def reinit_pseudo_banks(params: dict[str, np.ndarray], seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    out = dict(params)
    for m in MODALITIES:
        H = params[f"{m}.H"]
        out[f"{m}.H"] = rng.normal(0.0, 1.0 / np.sqrt(H.shape[1]), size=H.shape).astype(H.dtype)
    return out


def zero_update_sites(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Zero weights and biases at every residual update site."""
    out = dict(params)
    for m in MODALITIES:
        for site in UPDATE_SITES:
            for leaf in ("w", "b"):
                out[f"{m}.{site}.{leaf}"] = np.zeros_like(params[f"{m}.{site}.{leaf}"])
    return out


def as_tensors(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def embed(graph: MultimodalGraph, p: dict[str, Tensor], cfg: ModelConfig, flags: AblationFlags = FULL,
          L: int | None = None, trace: Trace | None = None) -> Tensor:
    """Fused node embeddings n x d."""
    Z_v, Z_t = dip_forward(graph, p, cfg.L if L is None else L, flags, cfg.normalize, trace)
    return fuse(Z_v, Z_t, p["fuse.w"], p["fuse.b"])


def node_logits(graph, p, cfg, flags=FULL, L=None) -> Tensor:
    Z = embed(graph, p, cfg, flags, L)
    return nc_logits(Z, p["nc.w1"], p["nc.b1"], p["nc.w2"], p["nc.b2"])


def nc_objective(graph: MultimodalGraph, labels, train_idx, cfg: ModelConfig, flags: AblationFlags = FULL):
    """Closure mapping parameter tensors to the masked NC loss."""
    def closure(p):
        return nc_loss(node_logits(graph, p, cfg, flags), labels, train_idx)
    return closure


def lp_objective(graph: MultimodalGraph, pos, neg, cfg: ModelConfig, flags: AblationFlags = FULL):
    """Closure mapping parameter tensors to BCE over fixed positive/negative pairs."""
    def closure(p):
        Z = embed(graph, p, cfg, flags)
        return lp_loss_from_logits(lp_logits(Z, pos), lp_logits(Z, neg))
    return closure


def loss_and_grads(closure, params: dict[str, np.ndarray]):
    tape = Tape()
    loss = closure(tape.params(params))
    return loss.item(), backward(tape, loss)
