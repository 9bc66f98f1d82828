"""Small parameter helpers shared by the network branches."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


def init_linear(rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float64, gain: float = 1.0):
    """Uniform fan-in initialisation; returns (weight, bias) parameters."""
    bound = gain * np.sqrt(6.0 / (d_in + d_out))
    w = rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)
    b = np.zeros(d_out, dtype=dtype)
    return ad.parameter(w), ad.parameter(b)


def linear(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Pointwise affine map over the last axis."""
    return ad.matmul(x, w) + b
