"""F0 tracks, the one-hot log-frequency control encoding, and F0 estimators."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .audio import SAMPLE_RATE, AudioClip
from .dsp import HOP, PATCH_FRAMES, n_frames_for

logger = logging.getLogger(__name__)

# control grid: 60 bins per octave over 6 octaves above C1
BIN_BASE_HZ = 32.7
BINS_PER_OCTAVE = 60
N_OCTAVES = 6
N_CONTROL_BINS = BINS_PER_OCTAVE * N_OCTAVES


@dataclass
class F0Track:
    values: np.ndarray  # Hz per frame, 0 = unvoiced
    hop: int = HOP
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("F0Track values must be 1-D")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("F0Track values must be finite and >= 0")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.hop / self.sample_rate

    @property
    def voiced(self) -> np.ndarray:
        return self.values > 0


def bin_center_hz(index) -> np.ndarray:
    return BIN_BASE_HZ * 2.0 ** (np.asarray(index, dtype=np.float64) / BINS_PER_OCTAVE)


def hz_to_bin(f0):
    """Nearest control bin for ``f0`` (scalar or array); out-of-grid values clamp to an edge."""
    f = np.asarray(f0, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("hz_to_bin is undefined for f0 <= 0 (unvoiced frames)")
    raw = np.round(BINS_PER_OCTAVE * np.log2(f / BIN_BASE_HZ)).astype(np.int64)
    if np.any((raw < 0) | (raw >= N_CONTROL_BINS)):
        logger.warning("F0 outside the %d-bin control grid clamped to edge bin", N_CONTROL_BINS)
    out = np.clip(raw, 0, N_CONTROL_BINS - 1)
    return int(out) if out.ndim == 0 else out


def encode_control(f0: F0Track | np.ndarray, start: int = 0, n_frames: int = PATCH_FRAMES) -> np.ndarray:
    """One-hot ``[n_frames, 360]`` matrix for frames ``start..start+n_frames``.

    Unvoiced frames, and frames past the end of the track, are all-zero rows.
    """
    values = f0.values if isinstance(f0, F0Track) else np.asarray(f0, dtype=np.float64)
    window = values[start : start + n_frames]
    out = np.zeros((n_frames, N_CONTROL_BINS), dtype=np.float32)
    rows = np.flatnonzero(window > 0)
    if rows.size:
        out[rows, hz_to_bin(window[rows])] = 1.0
    return out


def decode_control(control: np.ndarray) -> np.ndarray:
    """Bin-centre frequency per row (0 for all-zero rows)."""
    voiced = control.sum(axis=1) > 0
    return np.where(voiced, bin_center_hz(control.argmax(axis=1)), 0.0)


# ---------------------------------------------------------------------------
# DIO-style estimator


def _crossings(y: np.ndarray, rising: bool) -> np.ndarray:
    """Sub-sample positions where ``y`` crosses zero in the given direction."""
    if rising:
        idx = np.flatnonzero((y[:-1] < 0) & (y[1:] >= 0))
    else:
        idx = np.flatnonzero((y[:-1] >= 0) & (y[1:] < 0))
    a, b = y[idx], y[idx + 1]
    return idx + a / (a - b)


def _interval_contour(events: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Interval lengths between successive events, interpolated at ``positions``."""
    if events.size < 3:
        return np.full(positions.shape, np.nan)
    intervals = np.diff(events)
    mids = 0.5 * (events[1:] + events[:-1])
    return np.interp(positions, mids, intervals, left=np.nan, right=np.nan)


def _frame_rms(x: np.ndarray, n_frames: int, hop: int, width: int) -> np.ndarray:
    power = np.concatenate([[0.0], np.cumsum(x**2)])
    centres = np.arange(n_frames) * hop
    lo = np.clip(centres - width // 2, 0, x.size)
    hi = np.clip(centres + width // 2, 0, x.size)
    return np.sqrt((power[hi] - power[lo]) / np.maximum(hi - lo, 1))


def estimate_f0(
    audio: AudioClip,
    hop: int = HOP,
    f0_floor: float = 40.0,
    f0_ceil: float = 1000.0,
    channels_per_octave: int = 8,
    max_dispersion: float = 0.05,
    silence_db: float = -60.0,
) -> F0Track:
    """Event-interval F0 estimate on the shared frame grid.

    For each low-pass cutoff in a log-spaced bank the filtered signal's rising
    and falling zero crossings, peaks and dips give four interval contours; the
    band candidate is ``4 / sum(intervals)`` and is kept only if it lies in
    ``[cutoff / 2, cutoff]``. Per frame the candidate whose four intervals
    disagree least wins, and frames whose best relative spread exceeds
    ``max_dispersion`` (or that are near-silent) are unvoiced.
    """
    x = audio.samples
    sr = audio.sample_rate
    n_frames = n_frames_for(max(x.size, 1), hop)
    out = np.zeros(n_frames)
    if x.size < 2 * sr / f0_floor or not np.any(x):
        return F0Track(out, hop, sr)

    positions = np.arange(n_frames) * float(hop)
    n_bands = int(np.floor(channels_per_octave * np.log2(f0_ceil / f0_floor))) + 1
    cutoffs = f0_floor * 2.0 ** (np.arange(n_bands) / channels_per_octave)

    best_f0 = np.zeros(n_frames)
    best_disp = np.full(n_frames, np.inf)
    for fc in cutoffs:
        sos = butter(6, fc, btype="low", fs=sr, output="sos")
        y = sosfiltfilt(sos, x)
        dy = np.diff(y)
        contours = np.stack([
            _interval_contour(_crossings(y, True), positions),
            _interval_contour(_crossings(y, False), positions),
            _interval_contour(_crossings(dy, False) + 0.5, positions),  # peaks
            _interval_contour(_crossings(dy, True) + 0.5, positions),  # dips
        ])
        ok = np.all(np.isfinite(contours), axis=0)
        total = np.where(ok, contours.sum(axis=0), np.inf)
        cand = 4.0 * sr / total
        disp = np.where(ok, contours.std(axis=0) / np.maximum(contours.mean(axis=0), 1e-12), np.inf)
        valid = ok & (cand >= fc / 2) & (cand <= fc) & (cand >= f0_floor) & (cand <= f0_ceil)
        better = valid & (disp < best_disp)
        best_f0[better] = cand[better]
        best_disp[better] = disp[better]

    rms = _frame_rms(x, n_frames, hop, width=2 * hop)
    loud = rms > max(np.max(rms) * 10 ** (silence_db / 20), 1e-5)
    voiced = loud & (best_disp <= max_dispersion)
    out[voiced] = best_f0[voiced]
    return F0Track(out, hop, sr)


# ---------------------------------------------------------------------------
# oracle CSV tracks


def load_oracle_f0(
    path: str | Path, n_frames: int, hop: int = HOP, sample_rate: int = SAMPLE_RATE
) -> F0Track:
    """Read a ``time_s,f0_hz`` CSV and resample it to the frame grid by nearest time.

    Frames beyond the file's time extent (by more than half a frame) are unvoiced.
    """
    times, values = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == "time_s":
                continue
            try:
                if len(row) != 2:
                    raise ValueError(f"expected 2 fields, got {len(row)}")
                t, f = float(row[0]), float(row[1])
                if f < 0 or not np.isfinite(f) or not np.isfinite(t):
                    raise ValueError("negative or non-finite value")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed F0 row {row!r}: {exc}") from None
            times.append(t)
            values.append(f)
    out = np.zeros(n_frames)
    if times:
        times = np.asarray(times)
        values = np.asarray(values)
        order = np.argsort(times, kind="stable")
        times, values = times[order], values[order]
        grid = np.arange(n_frames) * hop / sample_rate
        idx = np.clip(np.searchsorted(times, grid), 1, len(times) - 1) if len(times) > 1 else np.zeros(n_frames, int)
        if len(times) > 1:
            left = times[idx - 1]
            right = times[idx]
            idx = np.where(np.abs(grid - left) <= np.abs(right - grid), idx - 1, idx)
        half_frame = 0.5 * hop / sample_rate
        inside = (grid >= times[0] - half_frame) & (grid <= times[-1] + half_frame)
        out[inside] = values[idx[inside]]
    return F0Track(out, hop, sample_rate)


def write_f0_csv(path: str | Path, track: F0Track) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "f0_hz"])
        for t, f in zip(track.times, track.values):
            writer.writerow([repr(float(t)), repr(float(f))])
