"""Conditional generator (KCN + GCN + condition fusion) and GCN discriminator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .conditions import WIDTH
from .errors import ContractError
from .gcn import GcnParams, gcn_forward
from .kcn import KcnParams, kcn_forward
from .layers import init_linear, linear
from .mesh import GraphTopology

SLOPE = 0.2
COND_WIDTH = 3 * WIDTH
BACKBONES = ("both", "kcn", "gcn")


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "both"
    k: int = 8
    d_f: int = 64
    d_h: int = 64
    d_c: int = 32
    fusion_hidden: int = 64
    gcn_widths: tuple[int, ...] = (3, 32, 64, 64, 32)
    disc_widths: tuple[int, ...] = (3, 32, 64, 64)
    use_age: bool = True
    use_sex: bool = True

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ContractError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        object.__setattr__(self, "gcn_widths", tuple(self.gcn_widths))
        object.__setattr__(self, "disc_widths", tuple(self.disc_widths))

    @property
    def uses_kcn(self) -> bool:
        return self.backbone in ("both", "kcn")

    @property
    def uses_gcn(self) -> bool:
        return self.backbone in ("both", "gcn")

    def condition_mask(self) -> np.ndarray:
        """Zeroes the age/sex slots of the condition vector when disabled."""
        mask = np.ones(COND_WIDTH)
        if not self.use_age:
            mask[:WIDTH] = 0
        if not self.use_sex:
            mask[WIDTH : 2 * WIDTH] = 0
        return mask


@dataclass
class GeneratorParams:
    kcn: KcnParams | None
    gcn: GcnParams | None
    cond_w: ad.Tensor
    cond_b: ad.Tensor
    fuse1_w: ad.Tensor
    fuse1_b: ad.Tensor
    fuse2_w: ad.Tensor
    fuse2_b: ad.Tensor

    @classmethod
    def init(cls, rng, cfg: ModelConfig, dtype=np.float64):
        kcn = KcnParams.init(rng, cfg.d_f, cfg.d_h, cfg.k, dtype=dtype) if cfg.uses_kcn else None
        gcn = GcnParams.init(rng, cfg.gcn_widths, dtype=dtype) if cfg.uses_gcn else None
        fused = (2 * cfg.d_h if kcn else 0) + (cfg.gcn_widths[-1] if gcn else 0) + cfg.d_c
        cond_w, cond_b = init_linear(rng, COND_WIDTH, cfg.d_c, dtype)
        f1w, f1b = init_linear(rng, fused, cfg.fusion_hidden, dtype)
        f2w, f2b = init_linear(rng, cfg.fusion_hidden, 3, dtype, gain=0.1)
        return cls(kcn, gcn, cond_w, cond_b, f1w, f1b, f2w, f2b)

    def tensors(self) -> dict[str, ad.Tensor]:
        out = {}
        if self.kcn is not None:
            out.update({f"kcn.{k}": v for k, v in self.kcn.tensors().items()})
        if self.gcn is not None:
            out.update({f"gcn.{k}": v for k, v in self.gcn.tensors().items()})
        for name in ("cond_w", "cond_b", "fuse1_w", "fuse1_b", "fuse2_w", "fuse2_b"):
            out[name] = getattr(self, name)
        return out

    def zero_tail(self) -> None:
        """Zero the last fusion layer so the generator returns its input."""
        self.fuse2_w.data[...] = 0
        self.fuse2_b.data[...] = 0


@dataclass
class DiscriminatorParams:
    gcn: GcnParams
    cond_w: ad.Tensor
    cond_b: ad.Tensor
    out_w: ad.Tensor
    out_b: ad.Tensor

    @classmethod
    def init(cls, rng, cfg: ModelConfig, dtype=np.float64):
        gcn = GcnParams.init(rng, cfg.disc_widths, dtype=dtype)
        cond_w, cond_b = init_linear(rng, COND_WIDTH, cfg.d_c, dtype)
        out_w, out_b = init_linear(rng, cfg.disc_widths[-1] + cfg.d_c, 1, dtype)
        return cls(gcn, cond_w, cond_b, out_w, out_b)

    def tensors(self) -> dict[str, ad.Tensor]:
        out = {f"gcn.{k}": v for k, v in self.gcn.tensors().items()}
        for name in ("cond_w", "cond_b", "out_w", "out_b"):
            out[name] = getattr(self, name)
        return out


def normalization(vertices: np.ndarray) -> tuple[np.ndarray, float]:
    """Centroid and RMS radius used to bring a mesh to zero mean, unit RMS."""
    v = np.asarray(vertices, dtype=np.float64)
    center = v.mean(axis=0)
    rms = float(np.sqrt(((v - center) ** 2).sum(axis=1).mean()))
    if not rms > 0:
        raise ContractError("cannot normalize a mesh whose vertices coincide")
    return center, rms


def _condition_tensor(cond: np.ndarray, cfg: ModelConfig, dtype) -> ad.Tensor:
    cond = np.asarray(cond)
    if cond.shape != (COND_WIDTH,):
        raise ContractError(f"condition vector must have {COND_WIDTH} entries, got {cond.shape}")
    return ad.Tensor((cond * cfg.condition_mask()).astype(dtype)[None, :])


def generator_displacement(
    vertices: np.ndarray,
    topo: GraphTopology,
    cond: np.ndarray,
    params: GeneratorParams,
    cfg: ModelConfig,
    neighbors: np.ndarray | None = None,
) -> ad.Tensor:
    """Per-vertex displacement in millimetres predicted for the source mesh."""
    v = np.asarray(vertices)
    n = v.shape[0]
    if topo.n_vertices != n:
        raise ContractError(f"topology has {topo.n_vertices} vertices, mesh has {n}")
    dtype = params.fuse1_w.dtype
    center, rms = normalization(v)
    x = ad.Tensor(((v - center) / rms).astype(dtype))

    parts = []
    if params.kcn is not None:
        parts.append(kcn_forward(x, params.kcn, neighbors))
    if params.gcn is not None:
        parts.append(gcn_forward(x, topo.propagation_as(dtype), params.gcn))
    c = ad.leaky_relu(linear(_condition_tensor(cond, cfg, dtype), params.cond_w, params.cond_b), SLOPE)
    parts.append(ad.broadcast_to(c, (n, c.shape[1])))

    h = ad.leaky_relu(linear(ad.concat(parts, axis=-1), params.fuse1_w, params.fuse1_b), SLOPE)
    delta = linear(h, params.fuse2_w, params.fuse2_b)
    return ad.scale(delta, rms)


def generator_forward(
    vertices: np.ndarray,
    topo: GraphTopology,
    cond: np.ndarray,
    params: GeneratorParams,
    cfg: ModelConfig,
    neighbors: np.ndarray | None = None,
) -> ad.Tensor:
    """Predicted target vertices (mm) as source plus displacement."""
    disp = generator_displacement(vertices, topo, cond, params, cfg, neighbors)
    return ad.Tensor(np.asarray(vertices, dtype=disp.dtype)) + disp


def predict_vertices(vertices, topo, cond, params, cfg) -> np.ndarray:
    """Inference in float64 around the network output; zero displacement is exact."""
    disp = generator_displacement(vertices, topo, cond, params, cfg)
    return np.asarray(vertices, dtype=np.float64) + disp.data.astype(np.float64)


def discriminator_forward(
    v: ad.Tensor,
    topo: GraphTopology,
    cond: np.ndarray,
    params: DiscriminatorParams,
    cfg: ModelConfig,
    frame: tuple[np.ndarray, float] | None = None,
) -> ad.Tensor:
    """Scalar realism score of candidate vertices under a condition.

    Vertices are mapped into ``frame`` (center, rms) before scoring; by
    default the candidate's own normalization is used.
    """
    if not isinstance(v, ad.Tensor):
        v = ad.Tensor(np.asarray(v, dtype=params.out_w.dtype))
    if topo.n_vertices != v.shape[0]:
        raise ContractError(f"topology has {topo.n_vertices} vertices, candidate has {v.shape[0]}")
    dtype = params.out_w.dtype
    center, rms = frame if frame is not None else normalization(v.data)
    x = ad.scale(v - ad.Tensor(np.asarray(center, dtype=dtype)), 1.0 / rms)
    h = gcn_forward(x, topo.propagation_as(dtype), params.gcn, final_activation=True)
    pooled = ad.mean_axis(h, axis=0)
    c = ad.leaky_relu(linear(_condition_tensor(cond, cfg, dtype), params.cond_w, params.cond_b), SLOPE)
    feat = ad.concat([ad.reshape(pooled, (1, -1)), c], axis=-1)
    return ad.reshape(linear(feat, params.out_w, params.out_b), ())
