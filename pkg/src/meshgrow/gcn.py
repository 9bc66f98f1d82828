"""Global branch: stacked graph convolutions with the normalized propagation matrix."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import ContractError
from .layers import init_linear

SLOPE = 0.2
DEFAULT_WIDTHS = (3, 32, 64, 64, 32)


@dataclass
class GcnParams:
    weights: list[ad.Tensor] = field(default_factory=list)
    biases: list[ad.Tensor] = field(default_factory=list)

    @classmethod
    def init(cls, rng, widths=DEFAULT_WIDTHS, dtype=np.float64):
        ws, bs = [], []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            w, b = init_linear(rng, d_in, d_out, dtype)
            ws.append(w)
            bs.append(b)
        return cls(ws, bs)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def tensors(self) -> dict[str, ad.Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"block{i}.w"] = w
            out[f"block{i}.b"] = b
        return out


def gcn_layer(x: ad.Tensor, p: sp.spmatrix, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """P X W + b."""
    if p.shape[0] != x.shape[0]:
        raise ContractError(f"gcn_layer: topology has {p.shape[0]} vertices, features have {x.shape[0]}")
    if x.shape[1] != w.shape[0]:
        raise ContractError(f"gcn_layer: feature width {x.shape[1]} != weight rows {w.shape[0]}")
    if w.shape[1] <= x.shape[1]:
        out = ad.sparse_matmul(p, ad.matmul(x, w))
    else:
        out = ad.matmul(ad.sparse_matmul(p, x), w)
    return out + b


def gcn_forward(x: ad.Tensor, p: sp.spmatrix, params: GcnParams, final_activation: bool = False) -> ad.Tensor:
    """Apply every block; leaky ReLU after all but the last unless ``final_activation``."""
    n_blocks = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = gcn_layer(x, p, w, b)
        if i < n_blocks - 1 or final_activation:
            x = ad.leaky_relu(x, SLOPE)
    return x
