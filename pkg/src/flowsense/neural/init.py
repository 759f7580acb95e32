from __future__ import annotations

import math

import numpy as np

from ..rng import Xoshiro256


def glorot_uniform(rng: Xoshiro256, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array(shape or (fan_in, fan_out), -limit, limit)
