"""Alternating conditional GAN training, checkpoint I/O and test-set evaluation."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import read_tensors, write_tensors
from .conditions import encode_condition
from .errors import CheckpointError, ContractError, NumericFault
from .losses import chamfer_loss, discriminator_loss, generator_adv_loss, l1_recon
from .metrics import EvalReport, score_prediction
from .model import (
    DiscriminatorParams,
    GeneratorParams,
    ModelConfig,
    discriminator_forward,
    generator_forward,
    normalization,
    predict_vertices,
)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "split", "l1", "cd", "hd", "mis_err")
FORMAT_NAME = "meshgrow-checkpoint"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_rec: float = 100.0
    lambda_adv: float = 1.0
    recon: str = "l1"
    adversarial: bool = True
    seed: int = 0
    backbone: str = "both"
    k: int = 8
    use_age: bool = True
    use_sex: bool = True
    precision: str = "float32"
    checkpoint_every: int = 10
    eval_train_pairs: int = 64
    max_train_pairs: int | None = None

    def __post_init__(self):
        if self.batch_size != 1:
            raise ContractError("only a mini-batch size of 1 is supported")
        if self.recon not in ("l1", "cd"):
            raise ContractError(f"recon must be 'l1' or 'cd', got {self.recon!r}")
        if self.lambda_rec < 0 or self.lambda_adv < 0:
            raise ContractError("loss weights must be non-negative")
        if self.lambda_rec == 0 and not (self.adversarial and self.lambda_adv > 0):
            raise ContractError("at least one loss term must be enabled")
        if self.precision not in ("float32", "float64"):
            raise ContractError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        self.model_config()

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ContractError(f"unknown config key {key!r}")
        return cls(**data)

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def model_config(self) -> ModelConfig:
        return ModelConfig(backbone=self.backbone, k=self.k, use_age=self.use_age, use_sex=self.use_sex)


def _seeded(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


class Trainer:
    """Generator, discriminator and optimizer state for one run."""

    def __init__(self, cfg: TrainConfig, topology, grid):
        self.cfg = cfg
        self.model_cfg = cfg.model_config()
        self.topology = topology
        self.grid = tuple(grid)
        init_rng = _seeded(cfg.seed, 0)
        self.gen = GeneratorParams.init(init_rng, self.model_cfg, dtype=cfg.dtype)
        self.disc = DiscriminatorParams.init(init_rng, self.model_cfg, dtype=cfg.dtype)
        self.opt_g = ad.AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.opt_d = ad.AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.rng = _seeded(cfg.seed, 1)
        self.epoch = 0
        self.global_step = 0

    # -- one optimisation step -------------------------------------------
    def step(self, source: np.ndarray, target: np.ndarray, cond: np.ndarray) -> dict[str, float]:
        cfg = self.cfg
        dtype = cfg.dtype
        try:
            pred = generator_forward(source, self.topology, cond, self.gen, self.model_cfg)
            tgt = ad.Tensor(np.asarray(target, dtype=dtype))
            out = {}
            d_params = self.disc.tensors()
            if cfg.adversarial:
                frame = normalization(source)
                d_real = discriminator_forward(tgt, self.topology, cond, self.disc, self.model_cfg, frame)
                d_fake = discriminator_forward(pred.detach(), self.topology, cond, self.disc, self.model_cfg, frame)
                d_loss = discriminator_loss(d_real, d_fake)
                ad.backward(d_loss)
                ad.adam_step(d_params, self.opt_d)
                out["d_loss"] = float(d_loss.data)

            recon = l1_recon(pred, tgt) if cfg.recon == "l1" else chamfer_loss(pred, tgt)
            total = ad.scale(recon, cfg.lambda_rec)
            out["recon"] = float(recon.data)
            if cfg.adversarial:
                d_fake_g = discriminator_forward(pred, self.topology, cond, self.disc, self.model_cfg, frame)
                g_adv = generator_adv_loss(d_fake_g)
                total = total + ad.scale(g_adv, cfg.lambda_adv)
                out["g_adv"] = float(g_adv.data)
            ad.backward(total)
            ad.adam_step(self.gen.tensors(), self.opt_g)
            ad.zero_grad(d_params.values())
        except NumericFault as exc:
            raise NumericFault(f"step {self.global_step}: {exc}", step=self.global_step) from exc
        out["g_loss"] = float(total.data)
        self.global_step += 1
        return out

    # -- inference -------------------------------------------------------
    def predict(self, source: np.ndarray, cond: np.ndarray) -> np.ndarray:
        return predict_vertices(source, self.topology, cond, self.gen, self.model_cfg)

    # -- checkpoints -----------------------------------------------------
    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, params in (("G", self.gen.tensors()), ("D", self.disc.tensors())):
            for name, t in params.items():
                out[f"{prefix}/{name}"] = t.data
        for prefix, opt in (("adamG", self.opt_g), ("adamD", self.opt_d)):
            for name in opt.m:
                out[f"{prefix}/m/{name}"] = opt.m[name]
                out[f"{prefix}/v/{name}"] = opt.v[name]
        return out

    def save(self, path) -> None:
        meta = {
            "format": FORMAT_NAME,
            "epoch": self.epoch,
            "global_step": self.global_step,
            "adam_g_step": self.opt_g.step,
            "adam_d_step": self.opt_d.step,
            "rng_state": self.rng.bit_generator.state,
            "config": asdict(self.cfg),
            "grid": list(self.grid),
        }
        write_tensors(path, self.state_tensors(), meta)

    @classmethod
    def load(cls, path, topology=None, grid=None) -> "Trainer":
        tensors, meta = read_tensors(path)
        if not meta or meta.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path}: missing or foreign checkpoint metadata")
        cfg = TrainConfig.from_dict(meta["config"])
        ckpt_grid = tuple(meta["grid"])
        if grid is not None and tuple(grid) != ckpt_grid:
            raise CheckpointError(f"{path}: checkpoint grid {ckpt_grid} does not match data grid {tuple(grid)}")
        if topology is None:
            from .synth import grid_faces
            from .mesh import build_topology, edges_from_faces

            n = ckpt_grid[0] * ckpt_grid[1]
            topology = build_topology(edges_from_faces(grid_faces(*ckpt_grid), n), n)
        trainer = cls(cfg, topology, ckpt_grid)
        for prefix, params in (("G", trainer.gen.tensors()), ("D", trainer.disc.tensors())):
            for name, t in params.items():
                key = f"{prefix}/{name}"
                if key not in tensors:
                    raise CheckpointError(f"{path}: missing tensor {key}")
                if tensors[key].shape != t.shape or tensors[key].dtype != t.dtype:
                    raise CheckpointError(
                        f"{path}: tensor {key} is {tensors[key].dtype}{tensors[key].shape}, "
                        f"model expects {t.dtype}{t.shape}"
                    )
                t.data[...] = tensors[key]
        for prefix, opt in (("adamG", trainer.opt_g), ("adamD", trainer.opt_d)):
            for key, arr in tensors.items():
                if key.startswith(f"{prefix}/m/"):
                    opt.m[key[len(prefix) + 3 :]] = arr.copy()
                elif key.startswith(f"{prefix}/v/"):
                    opt.v[key[len(prefix) + 3 :]] = arr.copy()
        trainer.opt_g.step = meta["adam_g_step"]
        trainer.opt_d.step = meta["adam_d_step"]
        trainer.rng.bit_generator.state = meta["rng_state"]
        trainer.epoch = meta["epoch"]
        trainer.global_step = meta["global_step"]
        return trainer


# ---------------------------------------------------------------------------
# evaluation

def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MESHGROW_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_pairs(trainer: Trainer, dataset, pairs) -> EvalReport:
    """Run the generator on every pair and score it against the target scan."""
    if not pairs:
        raise ContractError("no pairs to evaluate")
    n_rings, n_theta = dataset.grid
    if tuple(trainer.grid) != tuple(dataset.grid):
        raise CheckpointError(f"checkpoint grid {trainer.grid} does not match data grid {dataset.grid}")

    def one(pair):
        src = dataset.vertices(pair.source)
        tgt = dataset.vertices(pair.target)
        pred = trainer.predict(src, encode_condition(pair.condition))
        return score_prediction(pair.pair_id, pair.delta_months, pred, tgt, n_rings, n_theta)

    for p in pairs:  # warm the mesh cache before fanning out
        dataset.vertices(p.source), dataset.vertices(p.target)
    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, pairs))
    else:
        records = [one(p) for p in pairs]
    return EvalReport(records)


def evaluate(checkpoint, dataset, split: str = "test") -> EvalReport:
    trainer = Trainer.load(checkpoint, dataset.topology, dataset.grid)
    return evaluate_pairs(trainer, dataset, dataset.split_pairs(split))


def identity_report(dataset, pairs) -> EvalReport:
    """Scores of the trivial predictor that returns the source mesh."""
    n_rings, n_theta = dataset.grid
    return EvalReport(
        [
            score_prediction(
                p.pair_id, p.delta_months, dataset.vertices(p.source), dataset.vertices(p.target), n_rings, n_theta
            )
            for p in pairs
        ]
    )


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    trainer: Trainer
    log_rows: list[dict]
    step_losses: list[dict]


def _log_row(epoch, split, report: EvalReport) -> dict:
    s = report.summary
    return {"epoch": epoch, "split": split, "l1": s["mae"]["mean"], "cd": s["cd"]["mean"],
            "hd": s["hd"]["mean"], "mis_err": s["mis_err"]["mean"]}


def train(
    dataset,
    cfg: TrainConfig,
    out_dir=None,
    resume=None,
    pairs=None,
    val_pairs=None,
) -> TrainResult:
    """Train for ``cfg.epochs`` epochs (batch size 1, one D then one G update per pair).

    ``pairs`` overrides the training split; ``val_pairs`` the validation split.
    With ``resume`` the checkpoint's state (including the shuffle RNG) is
    restored and epoch numbering continues.
    """
    if resume is not None:
        trainer = Trainer.load(resume, dataset.topology, dataset.grid)
        cfg = trainer.cfg if cfg is None else cfg
        if asdict(trainer.cfg) | {"epochs": cfg.epochs} != asdict(cfg) | {"epochs": cfg.epochs}:
            raise CheckpointError("resume config differs from the checkpoint's config")
        trainer.cfg = cfg
    else:
        trainer = Trainer(cfg, dataset.topology, dataset.grid)

    train_pairs = list(pairs) if pairs is not None else dataset.split_pairs("train")
    if cfg.max_train_pairs is not None:
        train_pairs = train_pairs[: cfg.max_train_pairs]
    if not train_pairs:
        raise ContractError("no training pairs")
    if val_pairs is None:
        val_pairs = dataset.split_pairs("val") if "val" in dataset.splits else []
    eval_train = train_pairs[: cfg.eval_train_pairs]
    conds = {p.pair_id: encode_condition(p.condition) for p in train_pairs}

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")
        log_path = out / "metrics.csv"
        if resume is None or not log_path.exists():
            with open(log_path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    log_rows: list[dict] = []
    step_losses: list[dict] = []
    while trainer.epoch < cfg.epochs:
        epoch = trainer.epoch + 1
        order = trainer.rng.permutation(len(train_pairs))
        for i in order:
            pair = train_pairs[i]
            losses = trainer.step(dataset.vertices(pair.source), dataset.vertices(pair.target), conds[pair.pair_id])
            losses["epoch"] = epoch
            step_losses.append(losses)
        trainer.epoch = epoch

        rows = [_log_row(epoch, "train", evaluate_pairs(trainer, dataset, eval_train))]
        if val_pairs:
            rows.append(_log_row(epoch, "val", evaluate_pairs(trainer, dataset, val_pairs)))
        log_rows.extend(rows)
        log.info("epoch %d: %s", epoch, ", ".join(f"{r['split']} l1={r['l1']:.4f}" for r in rows))
        if out is not None:
            with open(out / "metrics.csv", "a", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
                writer.writerows(rows)
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                trainer.save(out / "checkpoints" / f"epoch_{epoch:04d}.mgan")
    if out is not None:
        trainer.save(out / "final.mgan")
    return TrainResult(trainer, log_rows, step_losses)
