"""Central finite-difference checks for the tensor primitives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

FD_STEP = 1e-5
PRIMITIVE_TOL = 1e-4


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, step: float = FD_STEP,
                       coords: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``x.data``.

    ``x.data`` is perturbed in place and restored.  When ``coords`` is given
    only those entries are estimated (the rest of the result stays zero).
    """
    grad = np.zeros_like(x.data)
    flat_coords = coords if coords is not None else list(np.ndindex(x.shape))
    with T.no_grad():
        for idx in flat_coords:
            orig = x.data[idx]
            x.data[idx] = orig + step
            up = fn().item()
            x.data[idx] = orig - step
            down = fn().item()
            x.data[idx] = orig
            grad[idx] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error ``max|a - n| / max(max|a|, max|n|)``."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = FD_STEP) -> list[float]:
    """Relative error of the analytic gradient of ``fn()`` for each input."""
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    T.backward(fn())
    errors = []
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        errors.append(relative_error(analytic, numerical_gradient(fn, x, step)))
    return errors


def _u(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape))


@dataclass
class _Case:
    inputs: list
    fn: Callable[[], Tensor]


def primitive_cases(rng: np.random.Generator) -> dict[str, _Case]:
    """One small randomized graph per primitive, inputs drawn from U[-1, 1]."""

    def u(*shape):
        return _u(rng, *shape)

    def make(op, *inputs):
        # random projection so every output entry reaches the scalar
        probe = op(*inputs)
        w = Tensor(rng.uniform(-1.0, 1.0, size=probe.shape))
        return _Case(list(inputs), lambda: (op(*inputs) * w).sum())

    mask = np.array([[True, True, False, True, False], [True, False, True, True, True]])
    cond = rng.uniform(size=(4, 1)) > 0.5
    positive = lambda *shape: Tensor(rng.uniform(0.5, 2.0, size=shape))  # noqa: E731

    return {
        "add": make(T.add, u(3, 4), u(4)),
        "sub": make(T.sub, u(2, 3), u(2, 3)),
        "mul": make(T.mul, u(3, 4), u(3, 1)),
        "div": make(T.div, u(2, 3), positive(2, 3)),
        "power": make(lambda a: T.power(a, 3.0), u(3,)),
        "exp": make(T.exp, u(3, 2)),
        "log": make(T.log, positive(3, 2)),
        "matmul": make(T.matmul, u(3, 5), u(5, 2)),
        "matmul_batched": make(T.matmul, u(2, 3, 4), u(2, 4, 3)),
        "softmax": make(T.softmax, u(3, 6)),
        "softmax_masked": make(lambda a: T.softmax(a, mask=mask), u(2, 5)),
        "sigmoid": make(T.sigmoid, u(4, 3)),
        "tanh": make(T.tanh, u(4, 3)),
        "relu": make(T.relu, u(4, 3)),
        "prelu": make(T.prelu, u(4, 3), Tensor(rng.uniform(0.05, 0.5, size=(1,)))),
        "layer_norm": make(T.layer_norm, u(3, 6), u(6), u(6)),
        "instance_norm": make(T.instance_norm, u(3, 7)),
        "mean": make(lambda a: T.mean(a, axis=1), u(3, 4, 5)),
        "sum": make(lambda a: T.sum_(a, axis=0, keepdims=True), u(3, 4)),
        "concat": make(lambda a, b: T.concat([a, b], axis=0), u(2, 3), u(4, 3)),
        "stack": make(lambda a, b: T.stack([a, b], axis=1), u(2, 3), u(2, 3)),
        "slice": make(lambda a: a[1:3, ::2], u(4, 5)),
        "split": make(lambda a: T.split(a, [3, 4], axis=1)[1] * 2.0, u(3, 7)),
        "take": make(lambda a: T.take(a, [4, 0, 2]), u(5, 3)),
        "put_rows": make(lambda a, v: T.put_rows(a, [1, 3], v), u(5, 3), u(2, 3)),
        "where": make(lambda a, b: T.where(cond, a, b), u(4, 3), u(4, 3)),
        "transpose_reshape": make(lambda a: T.reshape(T.transpose(a, (2, 0, 1)), (4, 6)), u(2, 3, 4)),
        "conv1d": make(lambda x, w, b: T.conv1d(x, w, b, stride=2), u(2, 21), u(3, 2, 5), u(3)),
        "conv_transpose1d": make(lambda x, w, b: T.conv_transpose1d(x, w, b, stride=2),
                                 u(3, 6), u(3, 2, 4), u(2)),
    }


def run_primitive_checks(seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> dict[str, float]:
    """Worst relative error per primitive over ``seeds`` (64-bit)."""
    worst: dict[str, float] = {}
    with T.precision("f64"):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            for name, case in primitive_cases(rng).items():
                err = max(check_gradients(case.fn, case.inputs))
                worst[name] = max(worst.get(name, 0.0), err)
    return worst
