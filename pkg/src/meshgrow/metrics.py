"""Vertex-set distance metrics, MIS diameter and the mean/std evaluation report."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .losses import l1_recon

_CHUNK = 1024
METRIC_NAMES = ("mae", "cd", "hd", "mis_err")


def mae(pred, target) -> float:
    return float(l1_recon(ad.Tensor(pred), ad.Tensor(target)).data)


def _directed_nn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each row of ``a`` to its nearest row of ``b``."""
    out = np.empty(a.shape[0])
    for start in range(0, a.shape[0], _CHUNK):
        diff = a[start : start + _CHUNK, None, :] - b[None, :, :]
        out[start : start + _CHUNK] = np.sqrt((diff * diff).sum(axis=-1).min(axis=1))
    return out


def _as_cloud(x, name) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError(f"{name}: expected a nonempty (N, d) point set, got {x.shape}")
    return x


def directed_distances(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = _as_cloud(a, "a")
    b = _as_cloud(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"point dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    return _directed_nn(a, b), _directed_nn(b, a)


def chamfer_distance(a, b) -> float:
    ab, ba = directed_distances(a, b)
    return 0.5 * (float(ab.mean()) + float(ba.mean()))


def hausdorff(a, b) -> float:
    ab, ba = directed_distances(a, b)
    return max(float(ab.max()), float(ba.max()))


def mis_diameter(vertices, n_rings: int, n_theta: int) -> float:
    """Largest ring inscribed-circle diameter of a ring-ordered tube mesh.

    Each ring's centroid stands in for the centerline point; its inscribed
    radius is the distance to the closest edge of the ring polygon, so a
    regular ring of radius r gives r * cos(pi / n_theta).
    """
    v = np.asarray(vertices, dtype=np.float64)
    if v.shape != (n_rings * n_theta, 3):
        raise ContractError(
            f"mis_diameter: expected {n_rings}x{n_theta}={n_rings * n_theta} vertices, got {v.shape[0]}"
        )
    rings = v.reshape(n_rings, n_theta, 3)
    centers = rings.mean(axis=1, keepdims=True)
    a = rings - centers
    seg = np.roll(rings, -1, axis=1) - rings
    seg_len2 = (seg * seg).sum(axis=-1)
    t = np.clip(-(a * seg).sum(axis=-1) / np.where(seg_len2 > 0, seg_len2, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * seg
    radii = np.sqrt((closest * closest).sum(axis=-1)).min(axis=1)
    return 2.0 * float(radii.max())


@dataclass
class SampleRecord:
    pair_id: str
    delta_months: int
    mae: float
    cd: float
    hd: float
    mis_pred: float
    mis_gt: float
    mis_err: float


def score_prediction(pair_id, delta, pred, target, n_rings, n_theta) -> SampleRecord:
    mis_p = mis_diameter(pred, n_rings, n_theta)
    mis_t = mis_diameter(target, n_rings, n_theta)
    ab, ba = directed_distances(pred, target)
    return SampleRecord(
        pair_id=pair_id,
        delta_months=int(delta),
        mae=mae(pred, target),
        cd=0.5 * (float(ab.mean()) + float(ba.mean())),
        hd=max(float(ab.max()), float(ba.max())),
        mis_pred=mis_p,
        mis_gt=mis_t,
        mis_err=abs(mis_p - mis_t),
    )


def aggregate(records: list[SampleRecord]) -> dict[str, dict[str, float]]:
    """Mean and population standard deviation of each metric."""
    if not records:
        raise ContractError("cannot aggregate an empty report")
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in records], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


@dataclass
class EvalReport:
    records: list[SampleRecord]
    summary: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.summary:
            self.summary = aggregate(self.records)

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "samples.csv"
        names = list(SampleRecord.__dataclass_fields__)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=names)
            writer.writeheader()
            for r in self.records:
                row = asdict(r)
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        json_path = out_dir / "summary.json"
        json_path.write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def read_samples_csv(path) -> list[SampleRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(
            SampleRecord(
                pair_id=row["pair_id"],
                delta_months=int(row["delta_months"]),
                **{k: float(row[k]) for k in ("mae", "cd", "hd", "mis_pred", "mis_gt", "mis_err")},
            )
        )
    return out
