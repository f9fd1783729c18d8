"""Separation metrics, permutation-invariant loss and the AdamW schedule."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

EPS = 1e-8


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data.astype(np.float64)
    if hasattr(x, "samples"):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def _check_pair(est: np.ndarray, ref: np.ndarray) -> None:
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError(f"estimate {est.shape} and reference {ref.shape} must be equal-length 1-D signals")


def si_snr(est, ref) -> float:
    """Scale-invariant SNR in dB, both signals zero-meaned.

    The eps guard is relative to the estimate's energy, which keeps the value
    exactly scale invariant: a perfect estimate gives about +80 dB and an
    orthogonal one about -80 dB.
    """
    est, ref = _as_array(est), _as_array(ref)
    _check_pair(est, ref)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = ref @ ref
    if ref_energy == 0.0:
        raise ValueError("reference is all zero after mean removal")
    target = (est @ ref) / ref_energy * ref
    noise = est - target
    floor = EPS * (est @ est) + EPS * EPS
    return float(10.0 * np.log10((target @ target + floor) / (noise @ noise + floor)))


def sdr(est, ref) -> float:
    """Plain energy-ratio SDR in dB (no scale projection, no mean removal)."""
    est, ref = _as_array(est), _as_array(ref)
    _check_pair(est, ref)
    ref_energy = ref @ ref
    if ref_energy == 0.0:
        raise ValueError("reference is all zero")
    err = est - ref
    floor = EPS * ref_energy
    return float(10.0 * np.log10((ref_energy + floor) / (err @ err + floor)))


def si_snr_i(est, ref, mixture) -> float:
    return si_snr(est, ref) - si_snr(mixture, ref)


def sdr_i(est, ref, mixture) -> float:
    return sdr(est, ref) - sdr(mixture, ref)


def si_snr_tensor(est: Tensor, ref) -> Tensor:
    """Differentiable :func:`si_snr` (same formula) with respect to ``est``."""
    ref_arr = _as_array(ref)
    if est.shape != ref_arr.shape or est.ndim != 1:
        raise ValueError(f"estimate {est.shape} and reference {ref_arr.shape} must be equal-length 1-D signals")
    ref_arr = ref_arr - ref_arr.mean()
    ref_energy = float(ref_arr @ ref_arr)
    if ref_energy == 0.0:
        raise ValueError("reference is all zero after mean removal")
    r = Tensor(ref_arr, dtype=est.dtype)
    e = est - ad.mean(est)
    target = (ad.sum_(e * r) / ref_energy) * r
    noise = e - target
    floor = EPS * ad.sum_(e * e) + EPS * EPS
    ratio = (ad.sum_(target * target) + floor) / (ad.sum_(noise * noise) + floor)
    return ad.log(ratio) * (10.0 / np.log(10.0))


@dataclass
class PermutationResult:
    loss: Tensor
    assignment: tuple[int, ...]  # estimate assignment[j] is matched with reference j
    n_permutations: int
    scores: np.ndarray           # S x S matrix, scores[i, j] = SI-SNR(est_i, ref_j)

    @property
    def value(self) -> float:
        return self.loss.item()


def upit_loss(ests: Sequence[Tensor], refs: Sequence) -> PermutationResult:
    """Negative mean SI-SNR under the best estimate-to-reference assignment."""
    n = len(ests)
    if n != len(refs) or n < 1:
        raise ValueError("need the same positive number of estimates and references")
    pair = [[si_snr_tensor(ests[i], refs[j]) for j in range(n)] for i in range(n)]
    scores = np.array([[float(pair[i][j].item()) for j in range(n)] for i in range(n)])
    best, best_total, count = None, -np.inf, 0
    for perm in itertools.permutations(range(n)):
        count += 1
        total = sum(scores[perm[j], j] for j in range(n))
        if total > best_total:
            best, best_total = perm, total
    chosen = pair[best[0]][0]
    for j in range(1, n):
        chosen = chosen + pair[best[j]][j]
    return PermutationResult(-chosen / float(n), tuple(best), count, scores)


# -- optimizer ----------------------------------------------------------------

def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        grads = {k: g * g.dtype.type(scale) for k, g in grads.items()}
    return grads, total


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0


class AdamW:
    """AdamW with global-norm clipping and per-epoch exponential LR decay."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 lr_decay: float = 0.98, clip_norm: float | None = 1.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = {p.name: p for p in params}
        if None in self.params:
            raise ValueError("all parameters must be named")
        self.base_lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2 = betas
        self.eps, self.lr_decay, self.clip_norm = eps, lr_decay, clip_norm
        self.state = OptimizerState()

    @property
    def lr(self) -> float:
        return self.base_lr * self.lr_decay ** self.state.epoch

    def end_epoch(self) -> None:
        self.state.epoch += 1

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """Update parameters in place; returns the pre-clip gradient norm."""
        if self.clip_norm is not None:
            grads, norm = clip_grad_norm(grads, self.clip_norm)
        else:
            norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
        st = self.state
        st.step += 1
        lr = self.lr
        c1 = 1.0 - self.beta1 ** st.step
        c2 = 1.0 - self.beta2 ** st.step
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            dt = p.data.dtype.type
            m = st.m.get(name)
            if m is None:
                m = st.m[name] = np.zeros_like(p.data)
                st.v[name] = np.zeros_like(p.data)
            v = st.v[name]
            m *= dt(self.beta1)
            m += dt(1.0 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data *= dt(1.0 - lr * self.weight_decay)
            p.data -= dt(lr / c1) * m / (np.sqrt(v / dt(c2)) + dt(self.eps))
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            if name in self.state.m:
                out[f"m.{name}"] = self.state.m[name]
                out[f"v.{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int, epoch: int) -> None:
        st = self.state
        st.step, st.epoch = step, epoch
        for name, p in self.params.items():
            if f"m.{name}" in arrays:
                st.m[name] = np.array(arrays[f"m.{name}"], dtype=p.dtype)
                st.v[name] = np.array(arrays[f"v.{name}"], dtype=p.dtype)


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    lr: float
    mean_depth: float
    assignment: tuple[int, ...]


def train_step(model, mixture, sources: Sequence, opt: AdamW) -> StepResult:
    """One batch-size-1 update: forward, uPIT loss, backward, clipped AdamW step."""
    samples = _as_array(mixture)
    estimates, trace = model(Tensor(samples, dtype=model.dtype))
    result = upit_loss(estimates, [_as_array(s) for s in sources])
    ad.backward(result.loss)
    grads = {name: p.grad for name, p in model.named_parameters() if p.grad is not None}
    lr = opt.lr
    norm = opt.step(grads)
    for p in model.parameters():
        p.grad = None
    return StepResult(result.value, norm, lr, trace.mean_depth, result.assignment)
