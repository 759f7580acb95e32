"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..rng import Xoshiro256
from .tensor import Tape, Tensor, backward

# below this magnitude gradients are compared absolutely; float64 central
# differences with h=1e-5 carry ~1e-11 of round-off on O(1) losses
GRAD_FLOOR = 1e-6


def relative_error(a: float, b: float, floor: float = GRAD_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    n_probes: int,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a dict of parameter tensors to a scalar loss tensor.  ``n_probes``
    coordinates are drawn uniformly over all parameter entries.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    names = list(params)
    base = {k: np.array(params[k], dtype=np.float64) for k in names}

    leaves = {k: Tensor(base[k], requires_grad=True, name=k) for k in names}
    with Tape() as tape:
        loss = f(leaves)
    grads = backward(tape, loss)

    sizes = np.array([base[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = Xoshiro256(seed)
    worst = 0.0
    for _ in range(n_probes):
        flat = rng.randbelow(int(offsets[-1]))
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[which], flat - offsets[which]
        tape_g = grads.get(id(leaves[name]), np.zeros_like(base[name])).reshape(-1)[idx]

        def at(delta):
            probe = {k: Tensor(v) for k, v in base.items()}
            arr = base[name].copy()
            arr.reshape(-1)[idx] += delta
            probe[name] = Tensor(arr)
            return float(f(probe).value)

        fd = (at(h) - at(-h)) / (2.0 * h)
        worst = max(worst, relative_error(float(tape_g), fd))
    return worst
