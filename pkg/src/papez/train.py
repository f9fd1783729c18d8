"""Toy training and evaluation on synthetic mixtures."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import checkpoint
from .config import PapezConfig, TrainConfig, load_config_file, to_kv
from .datagen import MixSpec, dataset, item_spec, synth_mixture
from .model import Papez, separate
from .objective import AdamW, StepResult, si_snr_i, sdr_i, train_step

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "loss", "grad_norm", "lr", "mean_halt_depth")


def train_template(cfg: TrainConfig) -> MixSpec:
    return MixSpec(seed=cfg.seed, sample_rate=cfg.sample_rate, duration=cfg.duration)


def eval_template(cfg: TrainConfig) -> MixSpec:
    return MixSpec(seed=cfg.seed + cfg.eval_seed_offset, sample_rate=cfg.sample_rate, duration=cfg.duration)


@dataclass
class TrainResult:
    model: Papez
    optimizer: AdamW
    history: list[StepResult] = field(default_factory=list)
    start_step: int = 0

    def epoch_means(self, epoch_size: int) -> list[float]:
        losses = [h.loss for h in self.history]
        return [float(np.mean(losses[i:i + epoch_size])) for i in range(0, len(losses), epoch_size)]


def save_training_state(outdir: str | os.PathLike, model: Papez, opt: AdamW,
                        model_cfg: PapezConfig, train_cfg: TrainConfig) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.ckpt")
    checkpoint.save_arrays(out / "optimizer.ckpt", opt.state_arrays())
    (out / "config.txt").write_text(to_kv(model_cfg, train_cfg))
    (out / "state.txt").write_text(f"step={opt.state.step}\nepoch={opt.state.epoch}\n")


def load_training_state(ckpt_dir: str | os.PathLike) -> tuple[Papez, AdamW, PapezConfig, TrainConfig]:
    src = Path(ckpt_dir)
    model_cfg, train_cfg = load_config_file(src / "config.txt")
    state = dict(line.split("=", 1) for line in (src / "state.txt").read_text().split())
    model, opt = build(model_cfg, train_cfg)
    model.load(src / "model.ckpt")
    opt.load_state_arrays(checkpoint.load_arrays(src / "optimizer.ckpt"), int(state["step"]), int(state["epoch"]))
    return model, opt, model_cfg, train_cfg


def build(model_cfg: PapezConfig, train_cfg: TrainConfig) -> tuple[Papez, AdamW]:
    with ad.precision(train_cfg.precision):
        model = Papez(model_cfg, seed=train_cfg.seed)
    opt = AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay,
                lr_decay=train_cfg.lr_decay, clip_norm=train_cfg.clip_norm)
    return model, opt


def train(model_cfg: PapezConfig, train_cfg: TrainConfig, outdir: str | os.PathLike | None = None,
          resume: str | os.PathLike | None = None, steps: int | None = None,
          on_step: Callable[[int, StepResult], None] | None = None) -> TrainResult:
    """Run ``steps`` (default ``train_cfg.steps``) batch-size-1 updates.

    The item for global step ``s`` is synthetic mixture ``s`` of the training
    seed range, so a resumed run sees the same data as an uninterrupted one.
    A checkpoint is written to ``outdir`` at every epoch boundary and at the end.
    """
    if resume is not None:
        model, opt, model_cfg, train_cfg = load_training_state(resume)
    else:
        model, opt = build(model_cfg, train_cfg)
    total = train_cfg.steps if steps is None else steps
    result = TrainResult(model, opt, start_step=opt.state.step)
    template = train_template(train_cfg)
    log_fh = None
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        log_path = Path(outdir) / "train_log.csv"
        fresh = not log_path.exists() or resume is None
        log_fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_fh)
        if fresh:
            writer.writerow(LOG_FIELDS)
    try:
        with ad.precision(train_cfg.precision):
            for _ in range(total):
                step = opt.state.step
                mixture, sources = synth_mixture(item_spec(template, step))
                res = train_step(model, mixture, sources, opt)
                result.history.append(res)
                if log_fh is not None:
                    writer.writerow([step, f"{res.loss:.6f}", f"{res.grad_norm:.6f}", f"{res.lr:.8g}",
                                     f"{res.mean_depth:.4f}"])
                if on_step is not None:
                    on_step(step, res)
                if opt.state.step % train_cfg.epoch_size == 0:
                    opt.end_epoch()
                    log.info("epoch %d done at step %d, lr %.3g", opt.state.epoch, opt.state.step, opt.lr)
                    if outdir is not None:
                        save_training_state(outdir, model, opt, model_cfg, train_cfg)
        if outdir is not None:
            save_training_state(outdir, model, opt, model_cfg, train_cfg)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


@dataclass
class EvalResult:
    si_snr_i: np.ndarray
    sdr_i: np.ndarray
    mean_depth: float

    @property
    def mean_si_snr_i(self) -> float:
        return float(self.si_snr_i.mean())

    def fraction_above(self, threshold: float = 0.0) -> float:
        return float(np.mean(self.si_snr_i > threshold))


def evaluate(model: Papez, template: MixSpec, count: int) -> EvalResult:
    """Best-permutation SI-SNRi / SDRi per held-out item."""
    si, sd, depths = [], [], []
    with ad.precision("f64" if model.dtype == np.float64 else "f32"):
        for mixture, sources in dataset(template, count):
            estimates, trace = separate(mixture, model)
            best = max(((0, 1), (1, 0)) if len(sources) == 2 else [tuple(range(len(sources)))],
                       key=lambda perm: sum(si_snr_i(estimates[perm[j]], sources[j], mixture)
                                            for j in range(len(sources))))
            si.append(np.mean([si_snr_i(estimates[best[j]], sources[j], mixture) for j in range(len(sources))]))
            sd.append(np.mean([sdr_i(estimates[best[j]], sources[j], mixture) for j in range(len(sources))]))
            depths.append(trace.mean_depth)
    return EvalResult(np.array(si), np.array(sd), float(np.mean(depths)))
