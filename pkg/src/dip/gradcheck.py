"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tape, Tensor, backward

Closure = Callable[[dict[str, Tensor]], Tensor]


class NondeterministicClosure(RuntimeError):
    pass


def _evaluate(closure: Closure, params: dict[str, np.ndarray]) -> float:
    tensors = {k: Tensor(v) for k, v in params.items()}
    return closure(tensors).item()


def finite_diff_check(closure: Closure, params: dict[str, np.ndarray], probes: int = 64,
                      h: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between tape gradients and central differences.

    ``closure`` maps a dict of parameter tensors to a 1x1 loss tensor and
    must be deterministic. Probed coordinates are drawn uniformly over all
    parameter entries.
    """
    base = _evaluate(closure, params)
    if _evaluate(closure, params) != base:
        raise NondeterministicClosure("two evaluations at the same point differ")

    tape = Tape()
    loss = closure(tape.params(params))
    grads = backward(tape, loss)

    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(sizes.sum()), size=min(probes, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        name, local = names[i], int(f - offsets[i])
        idx = np.unravel_index(local, params[name].shape)
        bumped = dict(params)
        plus = params[name].copy()
        plus[idx] += h
        bumped[name] = plus
        f_plus = _evaluate(closure, bumped)
        minus = params[name].copy()
        minus[idx] -= h
        bumped[name] = minus
        f_minus = _evaluate(closure, bumped)
        numeric = (f_plus - f_minus) / (2 * h)
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
