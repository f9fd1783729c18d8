"""Waveform encoder/decoder pair around the masking network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .nn import Module


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"mono audio expected, got samples with shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.isfinite(samples).all():
            raise ValueError("waveform contains non-finite samples")
        self.samples = samples

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class EncodedRep:
    values: Tensor  # E x F

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def encoded_frames(length: int, kernel: int = 16, stride: int = 8) -> int:
    if length < kernel:
        raise ValueError(f"input of {length} samples is shorter than the encoder kernel ({kernel})")
    return (length - kernel) // stride + 1


def decoded_length(frames: int, kernel: int = 16, stride: int = 8) -> int:
    return (frames - 1) * stride + kernel


def _conv_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Encoder(Module):
    """conv1d(k, s) -> instance norm -> ReLU -> pointwise conv."""

    def __init__(self, channels: int, kernel: int, stride: int, rng: np.random.Generator):
        self.kernel, self.stride = kernel, stride
        self.conv_w = Parameter(_conv_init(rng, (channels, 1, kernel), kernel))
        self.conv_b = Parameter(np.zeros(channels))
        self.point_w = Parameter(_conv_init(rng, (channels, channels, 1), channels))
        self.point_b = Parameter(np.zeros(channels))

    def __call__(self, samples: Tensor) -> Tensor:
        x = ad.reshape(samples, (1, -1))
        encoded_frames(x.shape[1], self.kernel, self.stride)
        h = ad.conv1d(x, self.conv_w, self.conv_b, stride=self.stride)
        h = ad.relu(ad.instance_norm(h))
        return ad.conv1d(h, self.point_w, self.point_b, stride=1)


class Decoder(Module):
    """Pointwise conv -> instance norm -> ReLU -> transposed conv(k, s); shared by all speakers."""

    def __init__(self, channels: int, kernel: int, stride: int, rng: np.random.Generator):
        self.kernel, self.stride = kernel, stride
        self.point_w = Parameter(_conv_init(rng, (channels, channels, 1), channels))
        self.point_b = Parameter(np.zeros(channels))
        self.deconv_w = Parameter(_conv_init(rng, (channels, 1, kernel), channels))
        self.deconv_b = Parameter(np.zeros(1))

    @property
    def channels(self) -> int:
        return self.point_w.shape[0]

    def __call__(self, rep: Tensor) -> Tensor:
        if rep.ndim != 2 or rep.shape[0] != self.channels:
            raise ValueError(f"decoder expects {self.channels} x F input, got {rep.shape}")
        h = ad.conv1d(rep, self.point_w, self.point_b, stride=1)
        h = ad.relu(ad.instance_norm(h))
        out = ad.conv_transpose1d(h, self.deconv_w, self.deconv_b, stride=self.stride)
        return ad.reshape(out, (-1,))


def encode(wave: Waveform, encoder: Encoder) -> EncodedRep:
    return EncodedRep(encoder(Tensor(wave.samples)))


def decode(rep: EncodedRep, decoder: Decoder, sample_rate: int = 8000) -> Waveform:
    with ad.no_grad():
        out = decoder(rep.values)
    return Waveform(out.data, sample_rate)


def apply_mask(rep: EncodedRep | Tensor, mask: Tensor) -> EncodedRep | Tensor:
    values = rep.values if isinstance(rep, EncodedRep) else rep
    if values.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match representation {values.shape}")
    out = values * mask
    return EncodedRep(out) if isinstance(rep, EncodedRep) else out


def align_length(signal: Tensor, length: int) -> Tensor:
    """Truncate or zero-pad a 1-D signal to ``length`` samples."""
    current = signal.shape[0]
    if current == length:
        return signal
    if current > length:
        return signal[:length]
    pad = Tensor(np.zeros(length - current, dtype=signal.dtype))
    return ad.concat([signal, pad])
