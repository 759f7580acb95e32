"""Adam with bias correction, written functionally over named arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], s: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update of every parameter named in ``grads``.

    Parameters absent from ``grads`` are passed through untouched, which is how
    frozen groups are handled.  Neither input is mutated.
    """
    t = s.step + 1
    c1 = 1.0 - s.beta1**t
    c2 = 1.0 - s.beta2**t
    new_params = dict(params)
    m, v = dict(s.m), dict(s.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m_prev = m.get(name, np.zeros_like(p))
        v_prev = v.get(name, np.zeros_like(p))
        m[name] = s.beta1 * m_prev + (1.0 - s.beta1) * g
        v[name] = s.beta2 * v_prev + (1.0 - s.beta2) * g * g
        new_params[name] = p - s.learning_rate * (m[name] / c1) / (np.sqrt(v[name] / c2) + s.epsilon)
    return new_params, AdamState(s.learning_rate, s.beta1, s.beta2, s.epsilon, t, m, v)
