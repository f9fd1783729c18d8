"""Instrumented measurements: MAC sweeps and end-to-end gradient spot checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .audit import OpCounter, fit_scaling_exponent, predict_macs
from .autodiff import Tensor
from .autodiff.gradcheck import FD_STEP, numerical_gradient
from .awm import AWMLayer
from .config import PapezConfig
from .halting import HaltingState
from .model import Papez
from .objective import upit_loss

SWEEP_AXES = ("N", "K", "M")


def measure_iteration(cfg: PapezConfig, n_tokens: int, seed: int = 0) -> OpCounter:
    """Counters of one AWM iteration over ``n_tokens`` random tokens, every token computed."""
    rng = np.random.default_rng(seed)
    layer = AWMLayer(cfg.hidden, cfg.heads, cfg.ffn_hidden, cfg.n_memory, 1, cfg.chunk_size, rng)
    counter = OpCounter()
    with ad.no_grad():
        h = Tensor(rng.standard_normal((n_tokens, cfg.hidden)))
        state = HaltingState(h, 1, cfg.p_th, cfg.halting, freeze=False)
        layer(h, layer.initial_memory(), state, computing=np.ones(n_tokens, dtype=bool), counter=counter)
    return counter


@dataclass
class SweepPoint:
    n_tokens: int
    chunk_size: int
    n_memory: int
    measured: int
    predicted: float

    def row(self):
        return [self.n_tokens, self.chunk_size, self.n_memory, self.measured, self.predicted]


SWEEP_HEADER = ("n_tokens", "chunk_size", "n_memory", "measured_attention_macs", "predicted_awm_macs")


def sweep(cfg: PapezConfig, axis: str, values, n_tokens: int = 1500, seed: int = 0) -> list[SweepPoint]:
    """Measure one iteration per value of ``axis`` (N = tokens, K = chunk size, M = memory slots)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    points = []
    for v in values:
        if axis == "N":
            run_cfg, n = cfg, int(v)
        elif axis == "K":
            run_cfg, n = cfg.replace(chunk_size=int(v)), n_tokens
        else:
            run_cfg, n = cfg.replace(n_memory=int(v)), n_tokens
        counter = measure_iteration(run_cfg, n, seed)
        predicted = predict_macs("awm", n, run_cfg.chunk_size, run_cfg.n_memory, run_cfg.hidden)
        points.append(SweepPoint(n, run_cfg.chunk_size, run_cfg.n_memory, counter.attention_macs, predicted))
    return points


def sweep_exponent(points: list[SweepPoint]) -> float:
    return fit_scaling_exponent([(p.n_tokens, p.measured) for p in points])


@dataclass
class SpotCheck:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def error(self) -> float:
        diff = abs(self.analytic - self.numeric)
        if diff < SPOT_ABS_TOL:
            return 0.0
        return diff / max(abs(self.analytic), abs(self.numeric))


# differences below this are finite-difference rounding noise, not gradient error
SPOT_ABS_TOL = 1e-8


def end_to_end_spot_checks(cfg: PapezConfig, length: int = 512, n_coords: int = 20, seed: int = 0,
                           step: float = FD_STEP) -> list[SpotCheck]:
    """Central differences of the uPIT loss at sampled parameter coordinates (64-bit).

    One random coordinate is drawn from every parameter; further coordinates
    are drawn from random parameters until ``n_coords`` are reached.
    """
    rng = np.random.default_rng(seed)
    checks = []
    with ad.precision("f64"):
        model = Papez(cfg, seed=seed)
        mixture_srcs = [rng.uniform(-0.5, 0.5, size=length) for _ in range(cfg.speakers)]
        mixture = Tensor(np.sum(mixture_srcs, axis=0))

        def loss():
            estimates, _ = model(mixture)
            return upit_loss(estimates, mixture_srcs).loss

        ad.backward(loss())
        params = list(model.named_parameters())
        picks = list(range(len(params)))
        while len(picks) < n_coords:
            picks.append(int(rng.integers(len(params))))
        for i in picks:
            name, p = params[i]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            analytic = float(p.grad[idx]) if p.grad is not None else 0.0
            numeric = float(numerical_gradient(loss, p, step, coords=[idx])[idx])
            checks.append(SpotCheck(name, idx, analytic, numeric))
        for p in model.parameters():
            p.grad = None
    return checks
