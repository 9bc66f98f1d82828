import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from meshgrow import autodiff as ad
from meshgrow.errors import ContractError
from meshgrow.losses import l1_recon
from meshgrow.metrics import (
    EvalReport,
    aggregate,
    chamfer_distance,
    hausdorff,
    mae,
    mis_diameter,
    read_samples_csv,
    score_prediction,
)
from meshgrow.synth import tube_mesh


def nn_dists(a, b):
    return np.array([min(np.linalg.norm(p - q) for q in b) for p in a])


@pytest.mark.parametrize("seed", range(5))
def test_cd_hd_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((25, 3)), rng.standard_normal((17, 3)) + 0.5
    ab, ba = nn_dists(a, b), nn_dists(b, a)
    assert chamfer_distance(a, b) == pytest.approx(0.5 * (ab.mean() + ba.mean()), abs=1e-12)
    assert hausdorff(a, b) == pytest.approx(max(ab.max(), ba.max()), abs=1e-12)


def test_metric_axioms():
    rng = np.random.default_rng(9)
    a, b = rng.standard_normal((30, 3)), rng.standard_normal((40, 3))
    assert chamfer_distance(a, a) == 0 and hausdorff(a, a) == 0
    assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), abs=1e-14)
    assert hausdorff(a, b) == hausdorff(b, a)
    assert hausdorff(a, b) >= max(nn_dists(a, b).mean(), nn_dists(b, a).mean())


def test_unit_translation():
    grid = np.stack(np.meshgrid(*[np.arange(3) * 10.0] * 3), -1).reshape(-1, 3)
    assert chamfer_distance(grid + [0, 1.0, 0], grid) == pytest.approx(1.0)
    assert hausdorff(grid + [0, 1.0, 0], grid) == pytest.approx(1.0)


def test_mae_examples():
    v = np.random.default_rng(0).standard_normal((10, 3))
    assert mae(v, v) == 0
    assert mae(v + [1.0, 0, 0], v) == pytest.approx(1 / 3)
    w = np.random.default_rng(1).standard_normal((10, 3))
    assert mae(w, v) == l1_recon(ad.Tensor(w), ad.Tensor(v)).item()


def test_bad_point_sets():
    with pytest.raises(ContractError):
        chamfer_distance(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(ContractError):
        hausdorff(np.zeros((2, 3)), np.zeros((2, 2)))


def test_mis_cylinder():
    mesh = tube_mesh(lambda s: np.full_like(s, 15.0), 10, 32)
    assert mis_diameter(mesh.vertices, 10, 32) == pytest.approx(30.0, abs=0.5)
    assert mis_diameter(mesh.vertices, 10, 32) == pytest.approx(30 * np.cos(np.pi / 32), abs=1e-9)


def test_mis_bulge_peak():
    # 31 rings over 150 mm puts ring 15 exactly at the bulge center
    mesh = tube_mesh(lambda s: 15 + 7 * np.exp(-((s - 75) ** 2) / (2 * 15**2)), 31, 32)
    assert mis_diameter(mesh.vertices, 31, 32) == pytest.approx(44.0, abs=0.7)


def test_mis_scale_and_rigid_invariance():
    mesh = tube_mesh(lambda s: 15 + 5 * np.exp(-((s - 60) ** 2) / 400), 12, 16, arc_radius=90.0)
    base = mis_diameter(mesh.vertices, 12, 16)
    assert abs(mis_diameter(mesh.vertices * 2.5, 12, 16) - 2.5 * base) < 1e-9
    rot = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
    moved = mesh.vertices @ rot.T + [10.0, -4.0, 7.0]
    assert abs(mis_diameter(moved, 12, 16) - base) < 1e-9


def test_mis_wrong_vertex_count():
    with pytest.raises(ContractError):
        mis_diameter(np.zeros((10, 3)), 3, 4)


def records(rng, n):
    out = []
    for i in range(n):
        src = rng.standard_normal((32, 3))
        tgt = src + rng.normal(0, 0.1, src.shape)
        out.append(score_prediction(f"p{i}", i - 2, src, tgt, 4, 8))
    return out


def test_aggregate_single_pair_std_zero():
    summary = aggregate(records(np.random.default_rng(0), 1))
    assert all(s["std"] == 0 for s in summary.values())


def test_report_reaggregates_from_csv(tmp_path):
    report = EvalReport(records(np.random.default_rng(1), 6))
    csv_path, json_path = report.write(tmp_path)
    back = read_samples_csv(csv_path)
    assert back == report.records
    for name, stats in aggregate(back).items():
        vals = np.array([getattr(r, name) for r in back])
        assert stats["mean"] == vals.mean() and stats["std"] == vals.std()
    assert json_path.read_text().startswith("{")


def test_empty_report():
    with pytest.raises(ContractError):
        aggregate([])
