"""16-bit PCM mono WAV reading and writing."""

from __future__ import annotations

import os
import wave

import numpy as np

from .frontend import Waveform


class UnsupportedFormatError(ValueError):
    pass


def read_wav(path: str | os.PathLike) -> Waveform:
    try:
        with wave.open(os.fspath(path), "rb") as fh:
            channels, width = fh.getnchannels(), fh.getsampwidth()
            rate, frames = fh.getframerate(), fh.getnframes()
            raw = fh.readframes(frames)
    except wave.Error as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise UnsupportedFormatError(f"{path}: truncated file") from exc
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: {channels} channels; only mono is supported")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: {8 * width}-bit samples; only 16-bit PCM is supported")
    if len(raw) != frames * 2:
        raise UnsupportedFormatError(f"{path}: truncated data ({len(raw)} of {frames * 2} bytes)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def quantize(samples: np.ndarray) -> np.ndarray:
    """Round to the nearest 16-bit code, saturating at the ends."""
    return np.clip(np.rint(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path: str | os.PathLike, wav: Waveform) -> None:
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(wav.sample_rate))
        fh.writeframes(quantize(wav.samples).tobytes())
