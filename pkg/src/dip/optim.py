"""Adam with bias correction, operating on named numpy parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """Apply one update and return the new parameter dict and state.

    Inputs are not mutated; the returned arrays replace them.
    """
    for k, p in params.items():
        if k not in grads:
            raise KeyError(f"missing gradient for {k!r}")
        if grads[k].shape != p.shape:
            raise ValueError(f"gradient shape {grads[k].shape} != parameter shape {p.shape} for {k!r}")
        if k in state.m and state.m[k].shape != p.shape:
            raise ValueError(f"moment shape mismatch for {k!r}")

    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m_new, v_new)
