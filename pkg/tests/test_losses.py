import numpy as np
import pytest

from meshgrow import autodiff as ad
from meshgrow.errors import ContractError
from meshgrow.losses import adversarial_losses, chamfer_loss, discriminator_loss, generator_adv_loss, l1_recon


def brute_chamfer(a, b):
    ab = [min(np.linalg.norm(p - q) for q in b) for p in a]
    ba = [min(np.linalg.norm(q - p) for p in a) for q in b]
    return 0.5 * (np.mean(ab) + np.mean(ba))


def test_l1_uniform_offset_is_one_third():
    v = np.random.default_rng(0).standard_normal((12, 3))
    assert l1_recon(ad.Tensor(v + [1.0, 0, 0]), ad.Tensor(v)).item() == pytest.approx(1 / 3, abs=1e-15)


def test_l1_single_vertex_offset():
    v = np.zeros((10, 3))
    w = v.copy()
    w[4, 0] = 3.0
    assert l1_recon(ad.Tensor(w), ad.Tensor(v)).item() == pytest.approx(0.1, abs=1e-15)


def test_l1_shape_mismatch():
    with pytest.raises(ContractError):
        l1_recon(ad.Tensor(np.zeros((4, 3))), ad.Tensor(np.zeros((5, 3))))


def test_chamfer_translation_and_identity():
    v = np.random.default_rng(1).standard_normal((20, 3)) * 10
    assert chamfer_loss(ad.Tensor(v), ad.Tensor(v)).item() == 0.0
    # far-apart points so the translated copy's nearest partner stays the same point
    grid = np.stack(np.meshgrid(*[np.arange(3) * 10.0] * 3), -1).reshape(-1, 3)
    assert chamfer_loss(ad.Tensor(grid + [1.0, 0, 0]), ad.Tensor(grid)).item() == pytest.approx(1.0, abs=1e-12)


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
    assert abs(chamfer_loss(ad.Tensor(a), ad.Tensor(b)).item() - brute_chamfer(a, b)) < 1e-12


def test_chamfer_unequal_sizes_and_symmetry():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((7, 3)), rng.standard_normal((19, 3))
    ab = chamfer_loss(ad.Tensor(a), ad.Tensor(b)).item()
    assert ab == pytest.approx(chamfer_loss(ad.Tensor(b), ad.Tensor(a)).item(), abs=1e-14)
    assert ab == pytest.approx(brute_chamfer(a, b), abs=1e-12)


def test_chamfer_rejects_empty():
    with pytest.raises(ContractError):
        chamfer_loss(ad.Tensor(np.zeros((0, 3))), ad.Tensor(np.zeros((3, 3))))


def test_chamfer_gradcheck():
    rng = np.random.default_rng(4)
    arrays = [rng.standard_normal((9, 3)), rng.standard_normal((11, 3))]
    assert ad.gradcheck(lambda a, b: chamfer_loss(a, b), arrays) < 1e-4


@pytest.mark.parametrize("real,fake", [(1.0, 0.0), (0.0, 1.0), (0.3, -0.7), (2.5, 4.0)])
def test_lsgan_values(real, fake):
    d_loss, g_loss = adversarial_losses(ad.Tensor(np.array(real)), ad.Tensor(np.array(fake)))
    assert d_loss.item() == pytest.approx(0.5 * (real - 1) ** 2 + 0.5 * fake**2)
    assert g_loss.item() == pytest.approx(0.5 * (fake - 1) ** 2)


def test_lsgan_optimum_is_zero():
    assert discriminator_loss(ad.Tensor(np.array(1.0)), ad.Tensor(np.array(0.0))).item() == 0.0
    assert generator_adv_loss(ad.Tensor(np.array(1.0))).item() == 0.0


def test_lsgan_gradients_match_finite_differences():
    arrays = [np.array(0.37), np.array(-1.2)]
    assert ad.gradcheck(discriminator_loss, arrays) < 1e-6
    assert ad.gradcheck(generator_adv_loss, arrays[1:]) < 1e-6
