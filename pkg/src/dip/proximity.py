"""Shared state space: node projector, multi-channel proximity and pathway weights.

Proximity between two state vectors a and b is

    phi(a, b) = sum_t lam_t * s_t(a) . s_t(b),   s_t(x) = leaky_relu(x W_t + b_t)

with the same channel transform on both sides, so phi is symmetric. All
tau channels are stored side by side in one d_s x (tau * d_c) weight, which
lets a whole p x q weight matrix come out of a single product
(S_A * lam) S_B^T of cost tau * p * q * d_c.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NORMALIZE_MODES = ("none", "row-softmax")


@dataclass
class StateProjector:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def from_params(cls, p: dict, prefix: str) -> StateProjector:
        return cls(p[f"{prefix}.w1"], p[f"{prefix}.b1"], p[f"{prefix}.w2"], p[f"{prefix}.b2"])


@dataclass
class ProximityChannels:
    w: Tensor  # d_s x (tau * d_c)
    b: Tensor  # 1 x (tau * d_c)
    lam: Tensor  # 1 x tau

    @classmethod
    def from_params(cls, p: dict, prefix: str) -> ProximityChannels:
        return cls(p[f"{prefix}.w"], p[f"{prefix}.b"], p[f"{prefix}.lam"])

    @property
    def tau(self) -> int:
        return self.lam.shape[1]

    @property
    def d_c(self) -> int:
        return self.w.shape[1] // self.tau

    @property
    def d_s(self) -> int:
        return self.w.shape[0]


@dataclass
class ProximityLog:
    calls: list[tuple[int, int, int, int, int]] = field(default_factory=list)  # (p, q, tau, d_c, d_s)

    @property
    def pair_madds(self) -> int:
        return sum(p * q * tau * d_c for p, q, tau, d_c, _ in self.calls)

    @property
    def projection_madds(self) -> int:
        return sum((p + q) * d_s * tau * d_c for p, q, tau, d_c, d_s in self.calls)


_logs: list[ProximityLog] = []


@contextlib.contextmanager
def log_proximity():
    log = ProximityLog()
    _logs.append(log)
    try:
        yield log
    finally:
        _logs.remove(log)


def embed_nodes(X: Tensor, proj: StateProjector) -> Tensor:
    """Row-wise two-layer perceptron into the state space."""
    if X.shape[1] != proj.w1.shape[0]:
        raise ValueError(f"feature width {X.shape[1]} does not match projector input {proj.w1.shape[0]}")
    hidden = ad.leaky_relu(ad.affine(X, proj.w1, proj.b1))
    return ad.affine(hidden, proj.w2, proj.b2)


def channel_states(X: Tensor, ch: ProximityChannels) -> Tensor:
    if X.shape[1] != ch.d_s:
        raise ValueError(f"state width {X.shape[1]} does not match channel input {ch.d_s}")
    return ad.leaky_relu(ad.affine(X, ch.w, ch.b))


def _expanded_lambda(ch: ProximityChannels) -> Tensor:
    # 1 x tau -> 1 x (tau * d_c), each weight repeated over its channel block
    spread = np.kron(np.eye(ch.tau), np.ones((1, ch.d_c))).astype(ch.lam.data.dtype)
    return ad.matmul(ch.lam, Tensor(spread))


def proximity_matrix(A: Tensor, B: Tensor, ch: ProximityChannels, normalize: str = "row-softmax") -> Tensor:
    """W[i, j] = phi(A_i, B_j), optionally softmax-normalized per row."""
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"state widths differ: {A.shape} vs {B.shape}")
    sa = channel_states(A, ch)
    sb = sa if B is A else channel_states(B, ch)
    weighted = ad.mul(sa, _expanded_lambda(ch))
    W = ad.matmul(weighted, ad.transpose(sb))
    for log in _logs:
        log.calls.append((A.shape[0], B.shape[0], ch.tau, ch.d_c, ch.d_s))
    return ad.softmax_rows(W) if normalize == "row-softmax" else W


def proximity(a, b, ch: ProximityChannels) -> float:
    """phi for a single pair of state vectors; exactly symmetric in (a, b)."""
    dtype = ch.w.data.dtype
    sa = channel_states(Tensor(np.asarray(a, dtype=dtype).reshape(1, -1)), ch).data[0]
    sb = channel_states(Tensor(np.asarray(b, dtype=dtype).reshape(1, -1)), ch).data[0]
    lam = _expanded_lambda(ch).data[0]
    return float(np.sum(lam * (sa * sb)))
