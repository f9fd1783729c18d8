"""Synthetic two-source mixtures with disjoint frequency bands."""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .frontend import Waveform

FAMILIES = ("tones", "noise", "chirp")
# nominal bands (Hz) for speaker 1 and speaker 2 at 8 kHz
BANDS = ((150.0, 900.0), (1500.0, 3600.0))
SNR_RANGE = (-5.0, 5.0)
PEAK = 0.9


@dataclass(frozen=True)
class MixSpec:
    seed: int
    sample_rate: int = 8000
    duration: float = 0.5
    snr_db: float | None = None                # None: drawn from U[-5, 5]
    families: tuple[str, str] | None = None    # None: drawn per speaker

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.snr_db is not None and not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise ValueError(f"snr_db must lie in {SNR_RANGE}")
        if self.families is not None and any(f not in FAMILIES for f in self.families):
            raise ValueError(f"families must be drawn from {FAMILIES}")

    @property
    def length(self) -> int:
        return int(round(self.duration * self.sample_rate))


def _tones(rng, t, band):
    out = np.zeros_like(t)
    for _ in range(rng.integers(3, 7)):
        freq = rng.uniform(*band)
        out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    return out


def _noise(rng, t, band, sample_rate):
    spectrum = np.fft.rfft(rng.standard_normal(t.size))
    freqs = np.fft.rfftfreq(t.size, 1.0 / sample_rate)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0.0
    return np.fft.irfft(spectrum, n=t.size)


def _chirp(rng, t, band):
    f0, f1 = rng.uniform(*band, size=2)
    span = t[-1] if t[-1] > 0 else 1.0
    return np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t / span) + rng.uniform(0, 2 * np.pi))


def _source(rng, family, band, length, sample_rate):
    t = np.arange(length) / sample_rate
    if family == "tones":
        sig = _tones(rng, t, band)
    elif family == "noise":
        sig = _noise(rng, t, band, sample_rate)
    else:
        sig = _chirp(rng, t, band)
    envelope = 0.65 + 0.35 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi))
    sig = sig * envelope
    return sig / np.sqrt(np.mean(sig * sig))


def resolve(spec: MixSpec) -> MixSpec:
    """Fill in the random fields of ``spec`` from its seed."""
    rng = np.random.default_rng([spec.seed, 0])
    snr = spec.snr_db if spec.snr_db is not None else float(rng.uniform(*SNR_RANGE))
    fams = spec.families or tuple(str(f) for f in rng.choice(FAMILIES, size=2))
    return dataclasses.replace(spec, snr_db=snr, families=fams)


def synth_mixture(spec: MixSpec, normalize: bool = True) -> tuple[Waveform, list[Waveform]]:
    """Mixture and its two sources; ``10 log10(E1 / E2) == snr_db``.

    With ``normalize`` all three signals share one gain that puts the largest
    peak at 0.9.
    """
    spec = resolve(spec)
    rng = np.random.default_rng([spec.seed, 1])
    n = spec.length
    if n < 2:
        raise ValueError("duration too short")
    s1 = _source(rng, spec.families[0], BANDS[0], n, spec.sample_rate)
    s2 = _source(rng, spec.families[1], BANDS[1], n, spec.sample_rate)
    s2 = s2 * np.sqrt((s1 @ s1) / (s2 @ s2) / 10.0 ** (spec.snr_db / 10.0))
    mix = s1 + s2
    if normalize:
        gain = PEAK / max(np.abs(mix).max(), np.abs(s1).max(), np.abs(s2).max())
        mix, s1, s2 = mix * gain, s1 * gain, s2 * gain
    sr = spec.sample_rate
    return Waveform(mix, sr), [Waveform(s1, sr), Waveform(s2, sr)]


def dataset(template: MixSpec, count: int, start: int = 0) -> Iterator[tuple[Waveform, list[Waveform]]]:
    """Items ``start .. start+count-1``; item ``i`` uses seed ``template.seed + i``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    for i in range(start, start + count):
        yield synth_mixture(item_spec(template, i))


def item_spec(template: MixSpec, index: int) -> MixSpec:
    return dataclasses.replace(template, seed=template.seed + index)


def write_manifest(path: str | os.PathLike, template: MixSpec, count: int, start: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "seed", "snr_db", "family1", "family2"])
        for i in range(start, start + count):
            spec = resolve(item_spec(template, i))
            writer.writerow([i, spec.seed, f"{spec.snr_db:.6f}", spec.families[0], spec.families[1]])
