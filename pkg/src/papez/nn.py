"""Small module system: parameter containers with dotted names."""

from __future__ import annotations

import os
from typing import Iterator

import numpy as np

from .autodiff import Parameter, Tensor, checkpoint
from . import autodiff as ad


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            yield from _walk(value, f"{prefix}{attr}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def assign_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ValueError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def save(self, path: str | os.PathLike) -> None:
        checkpoint.save_arrays(path, self.state_dict())

    def load(self, path: str | os.PathLike) -> None:
        self.load_state_dict(checkpoint.load_arrays(path))


def _walk(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class Linear(Module):
    """``x @ weight + bias`` with ``weight`` stored as ``in x out``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(xavier_uniform(rng, in_features, out_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class PReLU(Module):
    def __init__(self, init: float = 0.25):
        self.slope = Parameter(np.full((1,), init))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.prelu(x, self.slope)


class StepLayerNorm(Module):
    """Layer norm with a separate affine pair for each recurrence step.

    Row ``n - 1`` of ``gamma``/``beta`` is the affine used at step ``n``; the
    normalization itself is shared.
    """

    def __init__(self, features: int, steps: int):
        self.gamma = Parameter(np.ones((steps, features)))
        self.beta = Parameter(np.zeros((steps, features)))

    @property
    def steps(self) -> int:
        return self.gamma.shape[0]

    def __call__(self, x: Tensor, step: int) -> Tensor:
        if not 1 <= step <= self.steps:
            raise ValueError(f"step {step} outside 1..{self.steps}")
        return ad.layer_norm(x, self.gamma[step - 1], self.beta[step - 1])
