"""Command-line entry point: gen-data, train, predict, evaluate, ablate.

Exit codes: 0 success, 2 usage or contract error, 3 numeric fault.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .conditions import ClinicalCondition, encode_condition
from .errors import MeshGrowError, NumericFault
from .mesh import Mesh, load_mesh, mesh_topology, save_mesh
from .metrics import mis_diameter
from .model import predict_vertices
from .synth import DEFAULT_GRID, Dataset, GrowthModel, build_dataset
from .train import TrainConfig, Trainer, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("meshgrow")


class UsageError(MeshGrowError):
    pass


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        n_rings, n_theta = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 30,16, got {text!r}") from None
    return n_rings, n_theta


def _load_json(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} does not exist")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    return data


def _require_dir(path, what) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} {p} is not a directory")
    return p


def _require_file(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _train_config(config_path, overrides: dict) -> TrainConfig:
    data = _load_json(config_path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(data)


# ---------------------------------------------------------------------------
# commands

GEN_KEYS = {"patients", "seed", "grid", "growth"}


def cmd_gen_data(args) -> int:
    cfg = _load_json(args.config)
    unknown = set(cfg) - GEN_KEYS
    if unknown:
        raise UsageError(f"unknown config key {sorted(unknown)[0]!r}")
    patients = args.patients if args.patients is not None else cfg.get("patients", 60)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    grid = args.grid if args.grid is not None else tuple(cfg.get("grid", DEFAULT_GRID))
    growth_kwargs = cfg.get("growth", {})
    known = {f.name for f in fields(GrowthModel)}
    for key in growth_kwargs:
        if key not in known:
            raise UsageError(f"unknown config key 'growth.{key}'")
    growth = GrowthModel(**{k: tuple(v) if isinstance(v, list) else v for k, v in growth_kwargs.items()})
    if grid[0] < 4 or grid[1] < 8:
        raise UsageError(f"grid must have n_rings >= 4 and n_theta >= 8, got {grid[0]},{grid[1]}")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(out, patients, seed, grid, growth)
    n_scans = sum(len(r.scans) for r in ds.records)
    print(f"wrote {len(ds.records)} patients, {n_scans} scans, {len(ds.pairs)} pairs to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = _require_dir(args.data, "data directory")
    cfg = _train_config(args.config, {"epochs": args.epochs, "seed": args.seed})
    if args.resume is not None:
        _require_file(args.resume, "checkpoint")
    ds = Dataset.load(data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(ds, cfg, out_dir=out, resume=args.resume)
    except NumericFault as exc:
        print(f"numeric fault at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    last = [r for r in result.log_rows if r["epoch"] == result.trainer.epoch]
    for row in last:
        print(f"epoch {row['epoch']} {row['split']}: l1={row['l1']:.4f} cd={row['cd']:.4f} hd={row['hd']:.4f}")
    print(f"final checkpoint: {out / 'final.mgan'}")
    return EXIT_OK


def _delta_list(values) -> list[int]:
    out = []
    for v in values:
        out.extend(int(x) for x in str(v).split(",") if x.strip())
    return out


def cmd_predict(args) -> int:
    ckpt = _require_file(args.checkpoint, "checkpoint")
    mesh_path = _require_file(args.mesh, "mesh")
    deltas = _delta_list(args.delta)
    conds = [ClinicalCondition(args.age, args.sex, d) for d in deltas]
    trainer = Trainer.load(ckpt)
    mesh = load_mesh(mesh_path)
    topo = mesh_topology(mesh)
    n_rings, n_theta = trainer.grid
    ring_mesh = mesh.n_vertices == n_rings * n_theta
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    for cond in conds:
        pred = predict_vertices(mesh.vertices, topo, encode_condition(cond), trainer.gen, trainer.model_cfg)
        target = out if len(conds) == 1 else out.with_name(f"{out.stem}_d{cond.delta_months:+d}{out.suffix}")
        save_mesh(Mesh(pred, mesh.faces), target)
        if ring_mesh:
            mis = mis_diameter(pred, n_rings, n_theta)
            print(f"delta={cond.delta_months:+d} mis_diameter_mm={mis:.4f} mesh={target}")
        else:
            print(f"delta={cond.delta_months:+d} mis_diameter_mm=nan mesh={target}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = _require_file(args.checkpoint, "checkpoint")
    ds = Dataset.load(_require_dir(args.data, "data directory"))
    if args.split not in ds.splits:
        raise UsageError(f"split {args.split!r} not found; available: {sorted(ds.splits)}")
    report = evaluate(ckpt, ds, args.split)
    csv_path, json_path = report.write(args.out)
    for name, stats in report.summary.items():
        print(f"{name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


ABLATION_GRID = [
    (backbone, recon, adv)
    for backbone in ("kcn", "gcn", "both")
    for recon in ("l1", "cd")
    for adv in (False, True)
]
ABLATION_COLUMNS = ["cell", "backbone", "recon", "adv"] + [
    f"{m}_{s}" for m in ("mae", "cd", "hd", "mis_err") for s in ("mean", "std")
]


def cell_name(backbone, recon, adv) -> str:
    return f"{backbone}-{recon}-{'adv' if adv else 'noadv'}"


def run_ablation(ds: Dataset, base: dict, out: Path, split: str = "test") -> list[dict]:
    """Train and evaluate every grid cell; cells with a summary on disk are skipped."""
    rows = []
    for backbone, recon, adv in ABLATION_GRID:
        name = cell_name(backbone, recon, adv)
        cell_dir = out / "cells" / name
        summary_path = cell_dir / "report" / "summary.json"
        if summary_path.is_file():
            log.info("skipping completed cell %s", name)
            summary = json.loads(summary_path.read_text())
        else:
            cfg = TrainConfig.from_dict({**base, "backbone": backbone, "recon": recon, "adversarial": adv})
            train(ds, cfg, out_dir=cell_dir)
            report = evaluate(cell_dir / "final.mgan", ds, split)
            report.write(cell_dir / "report")
            summary = report.summary
        row = {"cell": name, "backbone": backbone, "recon": recon, "adv": adv}
        for metric, stats in summary.items():
            row[f"{metric}_mean"] = stats["mean"]
            row[f"{metric}_std"] = stats["std"]
        rows.append(row)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def cmd_ablate(args) -> int:
    ds = Dataset.load(_require_dir(args.data, "data directory"))
    base = _load_json(args.config)
    base.setdefault("epochs", 20)
    if args.epochs is not None:
        base["epochs"] = args.epochs
    if args.seed is not None:
        base["seed"] = args.seed
    TrainConfig.from_dict(base)  # reject bad keys before any work
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = run_ablation(ds, base, out)
    except NumericFault as exc:
        print(f"numeric fault at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print("| backbone | recon | adv | MAE | CD | HD | MIS err |")
    print("|---|---|---|---|---|---|---|")
    for r in rows:
        print(
            f"| {r['backbone']} | {r['recon']} | {'yes' if r['adv'] else 'no'} "
            + " ".join(f"| {r[f'{m}_mean']:.3f}±{r[f'{m}_std']:.3f}" for m in ("mae", "cd", "hd", "mis_err"))
            + " |"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshgrow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic longitudinal cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=_parse_grid, help="n_rings,n_theta (default 30,16)")
    p.add_argument("--config")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a mesh at another time point")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--age", type=int, required=True)
    p.add_argument("--sex", required=True)
    p.add_argument("--delta", required=True, nargs="+", help="months; several values or a comma list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="backbone x loss ablation sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericFault as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MeshGrowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
