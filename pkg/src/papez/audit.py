"""Operation counting and closed-form complexity models.

Attention cost is tracked in two units:

* ``attention_macs`` uses the unit of the complexity table, i.e. per chunk
  ``queries * keys * H**2``.  With every token transformed and ``K`` dividing
  the sequence this is exactly ``(N/K) (K+M)^2 H^2`` per iteration.
* ``attention_macs_exact`` counts the multiply-accumulates the layer really
  executes (Q/K/V/O projections, scores and weighted sums).

Norms and activations are not counted.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .halting import survival_curve

FORMULAS = ("dual_path_full", "dual_path_reduced", "awm", "intra_only")


@dataclass
class OpCounter:
    attention_macs: int = 0
    attention_macs_exact: int = 0
    ffn_macs: int = 0
    ffn_tokens: int = 0
    iterations: int = 0
    attention_macs_per_iter: list = field(default_factory=list)
    ffn_tokens_per_iter: list = field(default_factory=list)
    active_per_iter: list = field(default_factory=list)
    _attn: int = 0
    _ffn_tokens: int = 0

    def record_attention(self, queries: int, keys: int, hidden: int, seq_queries: int, heads: int) -> None:
        cost = queries * keys * hidden * hidden
        self.attention_macs += cost
        self._attn += cost
        # scores and weighted sum; heads * (H / heads) == H
        self.attention_macs_exact += 2 * queries * keys * hidden

    def record_projections(self, layout, n_memory: int, seq_queries: int, hidden: int) -> None:
        h2 = hidden * hidden
        kv_rows = layout.length + n_memory
        q_rows = n_memory + seq_queries
        o_rows = layout.num_chunks * n_memory + seq_queries
        self.attention_macs_exact += (2 * kv_rows + q_rows + o_rows) * h2

    def record_ffn(self, tokens: int, hidden: int, ffn_hidden: int) -> None:
        self.ffn_tokens += tokens
        self._ffn_tokens += tokens
        self.ffn_macs += tokens * (hidden * ffn_hidden + ffn_hidden * (hidden + 1))

    def end_iteration(self, active: int) -> None:
        self.iterations += 1
        self.attention_macs_per_iter.append(self._attn)
        self.ffn_tokens_per_iter.append(self._ffn_tokens)
        self.active_per_iter.append(active)
        self._attn = 0
        self._ffn_tokens = 0


@dataclass(frozen=True)
class CostModel:
    formula: str

    def __post_init__(self):
        if self.formula not in FORMULAS:
            raise ValueError(f"unknown cost model {self.formula!r}; expected one of {FORMULAS}")

    def macs(self, n_tokens, chunk_size, n_memory=0, hidden=1, depth_ratio=1):
        return predict_macs(self.formula, n_tokens, chunk_size, n_memory, hidden, depth_ratio)

    def params(self, hidden: int, depth_ratio=1):
        h2 = hidden * hidden
        if self.formula == "dual_path_full":
            return 8 * h2
        if self.formula == "dual_path_reduced":
            return (4 + Fraction(4, 1) / Fraction(depth_ratio)) * h2
        return 4 * h2


def _maybe_int(x: Fraction):
    return int(x) if x.denominator == 1 else float(x)


def predict_macs(formula: str, n_tokens, chunk_size, n_memory=0, hidden=1, depth_ratio=1):
    """Closed-form attention cost per iteration, in units of ``H**2`` multiplies.

    ``chunk_size`` may be fractional (e.g. ``sqrt(N)``); the result is exact
    (an ``int``) whenever the inputs make it integral.
    """
    if formula not in FORMULAS:
        raise ValueError(f"unknown cost model {formula!r}")
    if min(n_tokens, chunk_size, hidden, depth_ratio) <= 0 or n_memory < 0:
        raise ValueError("sizes must be positive")
    exact = all(isinstance(v, (int, np.integer)) for v in (n_tokens, chunk_size, n_memory, hidden, depth_ratio))
    conv = (lambda v: Fraction(int(v))) if exact else float
    N, K, M, H, S = (conv(v) for v in (n_tokens, chunk_size, n_memory, hidden, depth_ratio))
    h2 = H * H
    if formula == "awm":
        value = N / K * (K + M) ** 2 * h2
    elif formula == "intra_only":
        value = N / K * K ** 2 * h2
    elif formula == "dual_path_full":
        value = (N * K + N * N / K) * h2
    else:
        value = (N * K + N * N / (K * S)) * h2
    return _maybe_int(value) if exact else value


def fit_scaling_exponent(points: Iterable[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(macs)`` against ``log(n_tokens)``."""
    pts = sorted((float(n), float(y)) for n, y in points)
    if len(pts) < 4:
        raise ValueError(f"need at least 4 points to fit an exponent, got {len(pts)}")
    ns = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(ns <= 0) or np.any(ys <= 0):
        raise ValueError("points must be positive")
    if ns.max() / ns.min() < 8:
        raise ValueError("points must span at least 8x in n_tokens")
    slope, _ = np.polyfit(np.log(ns), np.log(ys), 1)
    return float(slope)


def full_attention_macs(n_tokens: int, chunk_size: int, n_memory: int, hidden: int) -> int:
    """``attention_macs`` of one iteration with every real token transformed."""
    chunks = -(-n_tokens // chunk_size)
    total = 0
    for c in range(chunks):
        real = min(chunk_size, n_tokens - c * chunk_size)
        total += (n_memory + real) * (n_memory + chunk_size) * hidden * hidden
    return total


def halting_report(traces: Sequence) -> dict:
    """Summarize forward traces (objects with ``state``, ``counter``, ``layout``, ``config``).

    Savings compare measured attention cost to running every token for
    ``max_steps`` iterations.
    """
    if not traces:
        raise ValueError("need at least one trace")
    depths, curves, measured, baseline, slot_depths = [], [], 0, 0, []
    for tr in traces:
        cfg = tr.config
        depths.append(tr.state.depth)
        curves.append(survival_curve(tr.state))
        measured += tr.counter.attention_macs
        baseline += cfg.max_steps * full_attention_macs(tr.layout.length, cfg.chunk_size, cfg.n_memory, cfg.hidden)
        slots = np.zeros(tr.layout.num_chunks * tr.layout.chunk_size, dtype=np.int64)
        slots[:tr.layout.length] = tr.state.depth
        slot_depths.append(slots)
    all_depths = np.concatenate(depths)
    return {
        "mean_depth": float(all_depths.mean()),
        "max_depth": int(all_depths.max()),
        "survival": np.mean(np.stack(curves), axis=0),
        "attention_macs": measured,
        "attention_macs_no_pruning": baseline,
        "savings": 1.0 - measured / baseline,
        "slot_depths": slot_depths,
    }


def write_report_csv(path: str | os.PathLike, report: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key in ("mean_depth", "max_depth", "attention_macs", "attention_macs_no_pruning", "savings"):
            writer.writerow([key, report[key]])
        for i, frac in enumerate(report["survival"], 1):
            writer.writerow([f"survival_step_{i}", f"{frac:.6f}"])


def write_points_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def complexity_table(n_tokens: int, chunk_size: int, n_memory: int, hidden: int, depth_ratio: int = 2) -> str:
    """Plain-text table with one row per architecture (time cost, attention params)."""
    rows = [
        ("Intra + Inter-T", "dual_path_full", math.isqrt(n_tokens) or 1),
        (f"Intra + 1/{depth_ratio} Inter-T", "dual_path_reduced", math.isqrt(n_tokens) or 1),
        ("Intra + AWM", "awm", chunk_size),
        ("Intra Only", "intra_only", chunk_size),
    ]
    lines = [f"N={n_tokens} K={chunk_size} M={n_memory} H={hidden} S={depth_ratio}",
             f"{'model':<22}{'chunk':>8}{'attention MACs':>22}{'params':>14}"]
    for label, formula, k in rows:
        macs = predict_macs(formula, n_tokens, k, n_memory if formula == "awm" else 0, hidden, depth_ratio)
        params = CostModel(formula).params(hidden, depth_ratio)
        lines.append(f"{label:<22}{k:>8}{float(macs):>22.4e}{float(params):>14.0f}")
    return "\n".join(lines)
