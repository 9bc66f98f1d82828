"""Synthetic longitudinal aneurysm cohort with vertex correspondence by construction.

Each patient is a tube with a Gaussian bulge whose amplitude grows linearly
in time at a rate that depends on age and sex. All meshes with the same grid
share one vertex ordering and face list.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .conditions import MAX_INTERVAL, ClinicalCondition, Sex
from .errors import ContractError
from .mesh import Mesh, build_topology, edges_from_faces, load_mesh, save_mesh

DEFAULT_GRID = (30, 16)


@dataclass(frozen=True)
class GrowthModel:
    r0: float = 15.0
    g0: float = 0.15
    gamma_age: float = 0.5
    gamma_sex: float = 0.3
    a0_range: tuple[float, float] = (2.0, 8.0)
    length: float = 150.0
    sigma_range: tuple[float, float] = (12.0, 20.0)
    center_range: tuple[float, float] = (0.35, 0.65)
    arc_fraction: float = 0.5
    arc_radius_range: tuple[float, float] = (70.0, 120.0)
    age_range: tuple[float, float] = (35.0, 93.0)
    scans_range: tuple[int, int] = (2, 8)
    gap_range: tuple[int, int] = (3, 24)

    def growth_rate(self, age0: float, sex: Sex) -> float:
        """mm/month of bulge amplitude."""
        male = 1.0 if Sex.parse(sex) is Sex.MALE else 0.0
        rate = self.g0 * (1.0 + self.gamma_age * (age0 - 60.0) / 30.0 + self.gamma_sex * male)
        return max(rate, 0.0)


@dataclass(frozen=True)
class TubeShape:
    """Per-patient geometry that stays fixed across scans."""

    a0: float
    s0: float
    sigma: float
    arc_radius: float | None = None

    def amplitude(self, growth: GrowthModel, rate: float, month: float) -> float:
        return self.a0 + rate * month

    def profile(self, growth: GrowthModel, amplitude: float) -> Callable[[np.ndarray], np.ndarray]:
        def r(s):
            return growth.r0 + amplitude * np.exp(-((s - self.s0) ** 2) / (2 * self.sigma**2))

        return r


def grid_faces(n_rings: int, n_theta: int) -> np.ndarray:
    """Triangulated quad strips between consecutive rings (2 * n_theta * (n_rings - 1) faces)."""
    i = np.arange(n_rings - 1)[:, None]
    j = np.arange(n_theta)[None, :]
    a = i * n_theta + j
    b = i * n_theta + (j + 1) % n_theta
    c = a + n_theta
    d = b + n_theta
    tri1 = np.stack([a, b, d], axis=-1).reshape(-1, 3)
    tri2 = np.stack([a, d, c], axis=-1).reshape(-1, 3)
    return np.stack([tri1, tri2], axis=1).reshape(-1, 3)


def tube_mesh(profile, n_rings: int, n_theta: int, length: float = 150.0, arc_radius: float | None = None) -> Mesh:
    """Ring-ordered tube: vertex ``i * n_theta + j`` is ring ``i``, angle ``j``.

    ``profile`` maps arc-length positions (mm) to radii. The centerline is the
    z axis, or a circular arc of ``arc_radius`` in the x-z plane.
    """
    if n_rings < 4 or n_theta < 3:
        raise ContractError(f"tube grid needs n_rings >= 4 and n_theta >= 3, got {n_rings}x{n_theta}")
    s = np.linspace(0.0, length, n_rings)
    radius = np.asarray(profile(s), dtype=np.float64) * np.ones(n_rings)
    if (radius <= 0).any():
        raise ContractError("tube radius must be positive")
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    if arc_radius is None:
        center = np.stack([np.zeros_like(s), np.zeros_like(s), s], axis=1)
        normal = np.tile([1.0, 0.0, 0.0], (n_rings, 1))
    else:
        phi = s / arc_radius
        center = np.stack([arc_radius * (1 - np.cos(phi)), np.zeros_like(s), arc_radius * np.sin(phi)], axis=1)
        normal = np.stack([np.cos(phi), np.zeros_like(s), -np.sin(phi)], axis=1)
    binormal = np.tile([0.0, 1.0, 0.0], (n_rings, 1))
    offsets = (
        np.cos(theta)[None, :, None] * normal[:, None, :] + np.sin(theta)[None, :, None] * binormal[:, None, :]
    )
    verts = center[:, None, :] + radius[:, None, None] * offsets
    return Mesh(verts.reshape(-1, 3), grid_faces(n_rings, n_theta))


# ---------------------------------------------------------------------------
# cohort

@dataclass
class Scan:
    scan_month: int
    age_years: int
    mesh_path: str
    mis_gt_mm: float


@dataclass
class PatientRecord:
    patient_id: str
    sex: Sex
    scans: list[Scan] = field(default_factory=list)


@dataclass(frozen=True)
class TrainingPair:
    pair_id: str
    patient_id: str
    source: str
    target: str
    delta_months: int
    age: int
    sex: Sex

    @property
    def condition(self) -> ClinicalCondition:
        return ClinicalCondition(self.age, self.sex, self.delta_months)


def _sample_shape(rng: np.random.Generator, growth: GrowthModel) -> TubeShape:
    a0 = rng.uniform(*growth.a0_range)
    s0 = rng.uniform(*growth.center_range) * growth.length
    sigma = rng.uniform(*growth.sigma_range)
    arc = rng.uniform(*growth.arc_radius_range) if rng.random() < growth.arc_fraction else None
    return TubeShape(a0, s0, sigma, arc)


def generate_cohort(
    seed: int,
    n_patients: int,
    grid: tuple[int, int] = DEFAULT_GRID,
    root=None,
    growth: GrowthModel = GrowthModel(),
) -> tuple[list[PatientRecord], dict[str, np.ndarray]]:
    """Sample a reproducible cohort.

    Returns the records and a ``mesh_path -> vertices`` map. When ``root`` is
    given the meshes are written under ``root/meshes``.
    """
    if n_patients < 1:
        raise ContractError("n_patients must be >= 1")
    n_rings, n_theta = grid
    if n_rings < 4 or n_theta < 8:
        raise ContractError(f"grid must have n_rings >= 4 and n_theta >= 8, got {n_rings},{n_theta}")
    rng = np.random.default_rng(seed)
    records: list[PatientRecord] = []
    meshes: dict[str, np.ndarray] = {}
    faces = grid_faces(n_rings, n_theta)
    if root is not None:
        (Path(root) / "meshes").mkdir(parents=True, exist_ok=True)
    for p in range(n_patients):
        pid = f"P{p:04d}"
        sex = Sex.MALE if rng.random() < 0.5 else Sex.FEMALE
        age0 = rng.uniform(*growth.age_range)
        rate = growth.growth_rate(age0, sex)
        shape = _sample_shape(rng, growth)
        n_scans = int(rng.integers(growth.scans_range[0], growth.scans_range[1] + 1))
        gaps = rng.integers(growth.gap_range[0], growth.gap_range[1] + 1, size=n_scans - 1)
        months = np.concatenate([[0], np.cumsum(gaps)]).astype(int)
        rec = PatientRecord(pid, sex)
        for k, month in enumerate(months):
            amp = shape.amplitude(growth, rate, month)
            mesh = tube_mesh(shape.profile(growth, amp), n_rings, n_theta, growth.length, shape.arc_radius)
            path = f"meshes/{pid}_{k}.obj"
            meshes[path] = mesh.vertices
            if root is not None:
                save_mesh(Mesh(mesh.vertices, faces), Path(root) / path)
            rec.scans.append(
                Scan(
                    scan_month=int(month),
                    age_years=int(np.floor(age0 + month / 12.0)),
                    mesh_path=path,
                    mis_gt_mm=2.0 * (growth.r0 + amp),
                )
            )
        records.append(rec)
    return records, meshes


def make_pairs(records: list[PatientRecord], max_delta: int = MAX_INTERVAL) -> list[TrainingPair]:
    """All ordered within-patient scan pairs whose interval fits the codec range."""
    pairs = []
    for rec in records:
        for i, src in enumerate(rec.scans):
            for j, tgt in enumerate(rec.scans):
                if i == j:
                    continue
                delta = tgt.scan_month - src.scan_month
                if abs(delta) > max_delta:
                    continue
                pairs.append(
                    TrainingPair(
                        pair_id=f"{rec.patient_id}:{i}->{j}",
                        patient_id=rec.patient_id,
                        source=src.mesh_path,
                        target=tgt.mesh_path,
                        delta_months=int(delta),
                        age=src.age_years,
                        sex=rec.sex,
                    )
                )
    return pairs


def split_counts(n: int, ratio=(7, 1, 2)) -> tuple[int, int, int]:
    if n < 3:
        raise ContractError(f"need at least 3 patients for a 3-way split, got {n}")
    total = sum(ratio)
    n_val = max(1, int(round(n * ratio[1] / total)))
    n_test = max(1, int(round(n * ratio[2] / total)))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ContractError(f"cannot split {n} patients with every split nonempty")
    return n_train, n_val, n_test


def split_cohort(records: list[PatientRecord], seed: int) -> dict[str, list[str]]:
    """Patient-level 7:1:2 split."""
    ids = sorted(r.patient_id for r in records)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, _ = split_counts(len(ids))
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train : n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val :]),
    }


# ---------------------------------------------------------------------------
# persistence

def _pair_json(p: TrainingPair) -> dict:
    d = asdict(p)
    d["sex"] = p.sex.value
    return d


def write_dataset(root, records, pairs, splits, grid, growth: GrowthModel, seed: int) -> None:
    root = Path(root)
    lines = []
    for rec in records:
        for scan in rec.scans:
            lines.append(json.dumps({"patient_id": rec.patient_id, "sex": rec.sex.value, **asdict(scan)}))
    (root / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    (root / "pairs.jsonl").write_text("\n".join(json.dumps(_pair_json(p)) for p in pairs) + "\n")
    (root / "splits.json").write_text(json.dumps({"seed": seed, **splits}, indent=2) + "\n")
    meta = {"grid": list(grid), "seed": seed, "growth": asdict(growth)}
    (root / "dataset.json").write_text(json.dumps(meta, indent=2) + "\n")


def build_dataset(root, n_patients: int, seed: int, grid=DEFAULT_GRID, growth: GrowthModel = GrowthModel()):
    records, _ = generate_cohort(seed, n_patients, grid, root=root, growth=growth)
    pairs = make_pairs(records)
    splits = split_cohort(records, seed)
    write_dataset(root, records, pairs, splits, grid, growth, seed)
    return Dataset.load(root)


class Dataset:
    """On-disk cohort with meshes cached in memory after first access."""

    def __init__(self, root, records, pairs, splits, grid):
        self.root = Path(root)
        self.records = records
        self.pairs = pairs
        self.splits = splits
        self.grid = tuple(grid)
        self._vertices: dict[str, np.ndarray] = {}
        self._topology = None
        self._faces = grid_faces(*self.grid)

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        for name in ("manifest.jsonl", "pairs.jsonl", "splits.json", "dataset.json"):
            if not (root / name).is_file():
                raise ContractError(f"dataset at {root} is missing {name}")
        meta = json.loads((root / "dataset.json").read_text())
        by_patient: dict[str, PatientRecord] = {}
        for line in (root / "manifest.jsonl").read_text().splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            rec = by_patient.setdefault(row["patient_id"], PatientRecord(row["patient_id"], Sex.parse(row["sex"])))
            rec.scans.append(Scan(row["scan_month"], row["age_years"], row["mesh_path"], row["mis_gt_mm"]))
        pairs = []
        for line in (root / "pairs.jsonl").read_text().splitlines():
            if line.strip():
                row = json.loads(line)
                row["sex"] = Sex.parse(row["sex"])
                pairs.append(TrainingPair(**row))
        splits = json.loads((root / "splits.json").read_text())
        splits = {k: v for k, v in splits.items() if k in ("train", "val", "test")}
        return cls(root, list(by_patient.values()), pairs, splits, meta["grid"])

    @property
    def faces(self) -> np.ndarray:
        return self._faces

    @property
    def topology(self):
        if self._topology is None:
            n = self.grid[0] * self.grid[1]
            self._topology = build_topology(edges_from_faces(self._faces, n), n)
        return self._topology

    def vertices(self, mesh_path: str) -> np.ndarray:
        if mesh_path not in self._vertices:
            self._vertices[mesh_path] = load_mesh(self.root / mesh_path).vertices
        return self._vertices[mesh_path]

    def split_pairs(self, split: str) -> list[TrainingPair]:
        if split not in self.splits:
            raise ContractError(f"unknown split {split!r}; available: {sorted(self.splits)}")
        ids = set(self.splits[split])
        return [p for p in self.pairs if p.patient_id in ids]
