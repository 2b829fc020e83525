"""Mono audio buffers and WAV I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

logger = logging.getLogger(__name__)

SAMPLE_RATE = 22050


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"AudioClip must be mono, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0


def read_wav(path: str | Path) -> AudioClip:
    """Read a PCM-16/32 or float WAV file; multichannel input is averaged to mono."""
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read audio file {path}: {exc}") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        logger.info("%s: %d channels mixed down to mono", path, data.shape[1])
        data = data.mean(axis=1)
    return AudioClip(data, int(sr))


def write_wav(path: str | Path, clip: AudioClip, subtype: str = "float32") -> None:
    """Write ``clip`` as float-32 (default) or 16-bit PCM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if subtype == "float32":
        data = clip.samples.astype(np.float32)
    elif subtype == "pcm16":
        data = np.round(np.clip(clip.samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(path, clip.sample_rate, data)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if clip.sample_rate == target_rate:
        return AudioClip(clip.samples.copy(), target_rate)
    g = np.gcd(clip.sample_rate, target_rate)
    out = resample_poly(clip.samples, target_rate // g, clip.sample_rate // g)
    return AudioClip(out, target_rate)
