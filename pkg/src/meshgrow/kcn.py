"""Local branch: per-vertex features, KNN in feature space, center/neighbor pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .layers import init_linear, linear

SLOPE = 0.2


@dataclass
class KcnParams:
    fe1_w: ad.Tensor
    fe1_b: ad.Tensor
    fe2_w: ad.Tensor
    fe2_b: ad.Tensor
    nei_w: ad.Tensor
    nei_b: ad.Tensor
    ctr_w: ad.Tensor
    ctr_b: ad.Tensor
    k: int = 8

    @classmethod
    def init(cls, rng, d_f: int = 64, d_h: int = 64, k: int = 8, hidden: int = 32, dtype=np.float64):
        if k < 1:
            raise ContractError(f"K must be >= 1, got {k}")
        return cls(
            *init_linear(rng, 3, hidden, dtype),
            *init_linear(rng, hidden, d_f, dtype),
            *init_linear(rng, d_f, d_h, dtype),
            *init_linear(rng, d_f, d_h, dtype),
            k=k,
        )

    @property
    def d_h(self) -> int:
        return self.nei_w.shape[1]

    def tensors(self) -> dict[str, ad.Tensor]:
        return {k: v for k, v in vars(self).items() if isinstance(v, ad.Tensor)}


def cnn_features(v: ad.Tensor, params: KcnParams) -> ad.Tensor:
    """Two kernel-1 convolutions 3 -> 32 -> d_f with a leaky ReLU in between."""
    if v.data.ndim != 2 or v.shape[1] != 3:
        raise ContractError(f"cnn_features: expected (N, 3) vertices, got {v.shape}")
    h = ad.leaky_relu(linear(v, params.fe1_w, params.fe1_b), SLOPE)
    return linear(h, params.fe2_w, params.fe2_b)


def knn_indices(features: np.ndarray, k: int) -> np.ndarray:
    """K nearest other rows of ``features`` per row, ordered by (distance, index).

    Candidates come from the Gram-matrix distance expansion; their distances
    are then recomputed from explicit differences, and any row whose cut-off
    is too close to call falls back to an exact full-row sort.
    """
    f = np.asarray(features)
    if f.dtype.kind != "f":
        f = f.astype(np.float64)
    n = f.shape[0]
    if not 1 <= k <= n - 1:
        raise ContractError(f"knn_indices: need 1 <= K <= N-1, got K={k}, N={n}")
    sq = np.einsum("ij,ij->i", f, f)
    approx = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    np.fill_diagonal(approx, np.inf)

    m = min(n - 1, k + 2)
    if m < n - 1:
        cand = np.argpartition(approx, m - 1, axis=1)[:, :m]
    else:
        cand = np.argsort(approx, axis=1, kind="stable")[:, : n - 1]
    exact = _sqdist_rows(f, cand)
    order = np.lexsort((cand, exact), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    exact = np.take_along_axis(exact, order, axis=1)
    out = cand[:, :k].copy()

    if m < n - 1:
        cut = np.take_along_axis(approx, cand, axis=1).max(axis=1)
        tol = 64 * np.finfo(f.dtype).eps * (sq + sq.max()) + 1e-30
        unsure = np.nonzero(exact[:, k - 1] >= cut - tol)[0]
        for i in unsure:
            d = ((f - f[i]) ** 2).sum(axis=1)
            d[i] = np.inf
            out[i] = np.lexsort((np.arange(n), d))[:k]
    return out


def _sqdist_rows(f: np.ndarray, idx: np.ndarray) -> np.ndarray:
    diff = f[idx] - f[:, None, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kcn_forward(v: ad.Tensor, params: KcnParams, neighbors: np.ndarray | None = None) -> ad.Tensor:
    """Local features of width 2*d_h: [mean neighbor conv | center conv].

    ``neighbors`` freezes the KNN indices; otherwise they are recomputed from
    the current features. Index selection is never differentiated.

    The neighbor convolution is pointwise, so its affine part is applied to
    the N feature rows before gathering instead of to all N*K gathered rows.
    Averaging the K copies of the broadcast center term returns the center
    term itself, so it is concatenated directly.
    """
    feats = cnn_features(v, params)
    n = feats.shape[0]
    if neighbors is None:
        neighbors = knn_indices(feats.data, params.k)
    elif neighbors.shape[0] != n:
        raise ContractError(f"kcn_forward: neighbors for {neighbors.shape[0]} vertices, mesh has {n}")
    nei_pre = ad.matmul(feats, params.nei_w)
    h_nei = ad.leaky_relu(ad.gather_rows(nei_pre, neighbors) + params.nei_b, SLOPE)
    h_ctr = ad.leaky_relu(linear(feats, params.ctr_w, params.ctr_b), SLOPE)
    return ad.concat([ad.mean_axis(h_nei, axis=1), h_ctr], axis=-1)
