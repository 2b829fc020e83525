"""Time-frequency frontend.

A 1024-point Hann STFT with hop 256 gives 513 one-sided bins; the model grid
keeps bins 0..511. The Nyquist row is carried separately on the
:class:`Spectrogram` so that an untouched ``istft(stft(x))`` is lossless, while
masked reconstructions zero it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .audio import SAMPLE_RATE, AudioClip

FFT_SIZE = 1024
HOP = 256
N_BINS = 512
PATCH_FRAMES = 128


@dataclass
class Spectrogram:
    values: np.ndarray  # complex [512, T]
    sample_rate: int = SAMPLE_RATE
    fft_size: int = FFT_SIZE
    hop: int = HOP
    length: int | None = None  # sample count of the analysed clip
    nyquist: np.ndarray | None = None  # complex [T], dropped from the model grid

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.fft_size // 2:
            raise ValueError(
                f"expected {self.fft_size // 2} bins, got shape {self.values.shape}"
            )
        if self.values.shape[1] < 1:
            raise ValueError("spectrogram needs at least one frame")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass
class Patch:
    magnitude: np.ndarray  # [512, 128], non-negative
    offset: int  # first frame in the parent spectrogram
    n_valid: int  # frames taken from the parent; the rest is zero padding
    parent: Spectrogram = field(repr=False)

    @property
    def padded(self) -> bool:
        return self.n_valid < self.magnitude.shape[1]


def n_frames_for(n_samples: int, hop: int = HOP) -> int:
    return -(-n_samples // hop)


def _window(fft_size: int) -> np.ndarray:
    return np.hanning(fft_size + 1)[:-1]  # periodic Hann


def stft(audio: AudioClip, fft_size: int = FFT_SIZE, hop: int = HOP) -> Spectrogram:
    """Frame ``t`` is centred on sample ``t * hop``; there are ``ceil(len / hop)`` frames."""
    x = audio.samples
    if x.size == 0:
        raise ValueError("cannot analyse empty audio")
    n_frames = n_frames_for(x.size, hop)
    half = fft_size // 2
    right = (n_frames - 1) * hop + half - x.size + 1
    padded = np.pad(x, (half, max(right, 0)), mode="reflect" if x.size > 1 else "constant")
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop][:n_frames]
    spec = np.fft.rfft(frames * _window(fft_size), axis=1).T
    return Spectrogram(
        values=spec[:half].copy(),
        sample_rate=audio.sample_rate,
        fft_size=fft_size,
        hop=hop,
        length=x.size,
        nyquist=spec[half].copy(),
    )


def istft(spec: Spectrogram, length: int | None = None) -> AudioClip:
    """Weighted overlap-add inverse of :func:`stft` (window-sum normalised)."""
    fft_size, hop, half = spec.fft_size, spec.hop, spec.fft_size // 2
    n_frames = spec.n_frames
    length = length if length is not None else spec.length
    if length is None:
        length = n_frames * hop
    nyq = spec.nyquist if spec.nyquist is not None else np.zeros(n_frames, complex)
    if nyq.shape != (n_frames,):
        raise ValueError("nyquist row does not match frame count")
    full = np.vstack([spec.values, nyq[None, :]])
    frames = np.fft.irfft(full.T, n=fft_size, axis=1)
    win = _window(fft_size)
    total = (n_frames - 1) * hop + fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(n_frames):
        out[t * hop : t * hop + fft_size] += frames[t] * win
        norm[t * hop : t * hop + fft_size] += win**2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    y = out[half : half + length]
    if y.size < length:
        y = np.pad(y, (0, length - y.size))
    return AudioClip(y, spec.sample_rate)


def patch_iter(
    spec: Spectrogram, hop_frames: int = PATCH_FRAMES, n_frames: int = PATCH_FRAMES
) -> Iterator[Patch]:
    """Yield fixed-width magnitude patches starting at ``0, hop, 2*hop, ...``."""
    if not 1 <= hop_frames <= n_frames:
        raise ValueError(f"hop_frames must be in [1, {n_frames}], got {hop_frames}")
    mag = spec.magnitude
    for offset in range(0, spec.n_frames, hop_frames):
        chunk = mag[:, offset : offset + n_frames]
        n_valid = chunk.shape[1]
        if n_valid < n_frames:
            chunk = np.pad(chunk, ((0, 0), (0, n_frames - n_valid)))
        yield Patch(chunk, offset, n_valid, spec)


def reconstruct(mask: np.ndarray, mixture: Spectrogram) -> AudioClip:
    """Apply a real mask to the mixture magnitude, keep the mixture phase, invert."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != mixture.values.shape:
        raise ValueError(f"mask shape {mask.shape} != mixture shape {mixture.values.shape}")
    masked = Spectrogram(
        values=mask * mixture.values,
        sample_rate=mixture.sample_rate,
        fft_size=mixture.fft_size,
        hop=mixture.hop,
        length=mixture.length,
        nyquist=np.zeros(mixture.n_frames, complex),
    )
    return istft(masked)


# debug dumps: magic, version, sample_rate, fft_size, hop, length, rows, cols, dtype code
_DUMP_MAGIC = b"SPEC"
_DUMP_HEADER = struct.Struct("<4sIIIIqII4s")


def save_spectrogram(path: str | Path, spec: Spectrogram) -> None:
    values = np.ascontiguousarray(spec.values, dtype="<c16")
    header = _DUMP_HEADER.pack(
        _DUMP_MAGIC, 1, spec.sample_rate, spec.fft_size, spec.hop,
        -1 if spec.length is None else spec.length,
        values.shape[0], values.shape[1], b"c16 ",
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes(order="C"))


def load_spectrogram(path: str | Path) -> Spectrogram:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, sr, fft_size, hop, length, rows, cols, code = _DUMP_HEADER.unpack_from(raw)
    if magic != _DUMP_MAGIC or version != 1 or code != b"c16 ":
        raise ValueError(f"{path}: not a spectrogram dump")
    payload = np.frombuffer(raw, dtype="<c16", offset=_DUMP_HEADER.size, count=rows * cols)
    return Spectrogram(
        values=payload.reshape(rows, cols).copy(),
        sample_rate=sr, fft_size=fft_size, hop=hop,
        length=None if length < 0 else length,
    )
