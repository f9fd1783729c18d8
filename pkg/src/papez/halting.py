"""Adaptive token pruning: per-token halting probabilities and output accumulation.

Each token ``i`` carries a cumulative halting probability ``P_i`` (starting
at 0) and an accumulator ``y_i``.  At step ``n``:

* tokens with ``P_i <= P_th`` are transformed again, ``P_i += p_i`` and
  ``y_i += p_i * h_i``;
* tokens whose ``P_i`` already exceeded ``P_th`` keep their ``h_i``, receive
  the one-off correction ``y_i += (1 - P_i) * h_i`` and then ``P_i = 1``.

The correction weight is negative when ``P_i`` overshot 1; the weights of
every token still sum to one.  The ``clamped`` variant instead gives the
remainder ``1 - P_i`` at the step where ``P_i + p_i`` crosses the threshold.
Tokens still running after ``max_steps`` get their remainder from
:meth:`HaltingState.finalize_remainder`.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

VARIANTS = ("overshoot", "clamped")


class HaltingState:
    def __init__(self, h0: Tensor, max_steps: int, threshold: float = 0.9,
                 variant: str = "overshoot", freeze: bool = True):
        if variant not in VARIANTS:
            raise ValueError(f"unknown halting variant {variant!r}")
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        n_tokens = h0.shape[0]
        self.max_steps = max_steps
        self.threshold = float(threshold)
        self.variant = variant
        self.freeze = freeze
        self.h = h0
        self.y = Tensor(np.zeros(h0.shape, dtype=h0.dtype))
        self.P = Tensor(np.zeros(n_tokens, dtype=h0.dtype))
        self.active = np.ones(n_tokens, dtype=bool)
        self.step = 0
        self.depth = np.zeros(n_tokens, dtype=np.int64)
        self.halt_step = np.zeros(n_tokens, dtype=np.int64)
        # row n-1: weights applied at step n; last row: remainder from finalize
        self.weight_log = np.zeros((max_steps + 1, n_tokens))
        self.computed: list[np.ndarray] = []
        self.finalized = False

    @property
    def n_tokens(self) -> int:
        return self.active.size

    @property
    def computing(self) -> np.ndarray:
        """Tokens that ``f_T`` must transform at the next step."""
        return self.active & (self.P.data <= self.threshold)

    @property
    def done(self) -> bool:
        return not self.active.any()

    def step_update(self, h_new: Tensor, p_new: Tensor) -> "HaltingState":
        """Apply one step of the recurrence.

        ``h_new``/``p_new`` only matter on rows in :attr:`computing`; other
        rows are ignored (or, with ``freeze=False``, ``h_new`` is taken for
        every token).
        """
        if self.step >= self.max_steps:
            raise RuntimeError(f"step_update called after max_steps={self.max_steps}")
        if h_new.shape != self.h.shape or p_new.shape != (self.n_tokens,):
            raise ValueError(f"shape mismatch: h {h_new.shape} vs {self.h.shape}, p {p_new.shape}")
        comp = self.computing
        probs = p_new.data[comp]
        if probs.size and (np.any(probs < 0.0) or np.any(probs > 1.0)):
            raise ValueError("halting probabilities must lie in [0, 1]")
        P_prev = self.P
        zero = Tensor(np.zeros((), dtype=P_prev.dtype))
        one = Tensor(np.ones((), dtype=P_prev.dtype))
        remainder = one - P_prev
        if self.variant == "overshoot":
            correcting = self.active & ~comp
            weight = ad.where(comp, p_new, ad.where(correcting, remainder, zero))
            P_next = ad.where(comp, P_prev + p_new, ad.where(correcting, one, P_prev))
            halted = correcting
        else:
            halted = comp & (P_prev.data + p_new.data > self.threshold)
            weight = ad.where(halted, remainder, ad.where(comp, p_new, zero))
            P_next = ad.where(halted, one, ad.where(comp, P_prev + p_new, P_prev))
        h_used = ad.where(comp[:, None], h_new, self.h) if self.freeze else h_new
        self.y = self.y + ad.reshape(weight, (-1, 1)) * h_used
        self.h = h_used
        self.P = P_next
        self.step += 1
        self.weight_log[self.step - 1] = weight.data
        self.depth += comp
        self.halt_step[halted] = self.step
        self.active = self.active & ~halted
        self.computed.append(comp)
        return self

    def finalize_remainder(self) -> "HaltingState":
        """Give still-running tokens the weight ``1 - P`` on their last state.

        A state without active tokens is left unchanged.
        """
        if self.finalized or not self.active.any():
            self.finalized = True
            return self
        if self.step != self.max_steps:
            raise RuntimeError(f"finalize_remainder needs step == {self.max_steps}, at {self.step}")
        self.finalized = True
        remaining = self.active
        zero = Tensor(np.zeros((), dtype=self.P.dtype))
        one = Tensor(np.ones((), dtype=self.P.dtype))
        weight = ad.where(remaining, one - self.P, zero)
        self.y = self.y + ad.reshape(weight, (-1, 1)) * self.h
        self.P = ad.where(remaining, one, self.P)
        self.weight_log[self.max_steps] = weight.data
        self.halt_step[remaining] = self.max_steps + 1
        self.active = np.zeros_like(self.active)
        return self

    def weight_sums(self) -> np.ndarray:
        return self.weight_log.sum(axis=0)

    def weights_of(self, token: int) -> list[float]:
        """Non-zero weights applied to ``token``, in step order."""
        col = self.weight_log[:, token]
        return [float(w) for w in col if w != 0.0]


def survival_curve(state: HaltingState) -> np.ndarray:
    """Fraction of tokens transformed at each step ``1..max_steps``.

    Steps that were never executed count as zero, so the curve is always
    ``max_steps`` long and non-increasing.
    """
    curve = np.zeros(state.max_steps)
    n = max(state.n_tokens, 1)
    for i, comp in enumerate(state.computed):
        curve[i] = comp.sum() / n
    return curve


def write_survival_csv(path: str | os.PathLike, curve: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "active_fraction"])
        for i, frac in enumerate(curve, 1):
            writer.writerow([i, f"{frac:.6f}"])
