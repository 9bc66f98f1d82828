"""Reconstruction and least-squares adversarial objectives."""
from __future__ import annotations

from . import autodiff as ad
from .errors import ContractError


def l1_recon(pred: ad.Tensor, target: ad.Tensor) -> ad.Tensor:
    """Mean absolute coordinate error over all 3N entries (mm)."""
    if pred.shape != target.shape:
        raise ContractError(f"l1_recon: vertex arrays differ in shape, {pred.shape} vs {target.shape}")
    return ad.l1_loss(pred, target)


def chamfer_loss(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Symmetric mean nearest-neighbour Euclidean distance, halved.

    The gradient reaches only the nearest partner of each point.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise ContractError(f"chamfer_loss: need two nonempty point sets, got {a.shape} and {b.shape}")
    d2 = ad.pairwise_sqdist(a, b)
    a_to_b = ad.mean_axis(ad.sqrt(ad.min_reduce_last(d2)))
    b_to_a = ad.mean_axis(ad.sqrt(ad.min_reduce_last(ad.transpose(d2))))
    return ad.scale(a_to_b + b_to_a, 0.5)


def _half_square(x: ad.Tensor) -> ad.Tensor:
    return ad.scale(ad.mul(x, x), 0.5)


def discriminator_loss(d_real: ad.Tensor, d_fake: ad.Tensor) -> ad.Tensor:
    return _half_square(d_real - 1.0) + _half_square(d_fake)


def generator_adv_loss(d_fake: ad.Tensor) -> ad.Tensor:
    return _half_square(d_fake - 1.0)


def adversarial_losses(d_real: ad.Tensor, d_fake: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Least-squares GAN objectives ``(d_loss, g_loss)`` from scalar scores."""
    return discriminator_loss(d_real, d_fake), generator_adv_loss(d_fake)
