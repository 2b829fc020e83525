"""SATB stems: synthesis, ingestion, curation, quartet/unison mixing and splits."""

from __future__ import annotations

import enum
import itertools
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .audio import SAMPLE_RATE, AudioClip, read_wav, resample
from .dsp import HOP, n_frames_for
from .pitch import F0Track

logger = logging.getLogger(__name__)

PEAK_TARGET = 0.95
SEMITONE = 2.0 ** (1 / 12)


class VoicePart(enum.Enum):
    SOPRANO = ("Soprano", 260.0, 880.0)
    ALTO = ("Alto", 190.0, 660.0)
    TENOR = ("Tenor", 145.0, 440.0)
    BASS = ("Bass", 90.0, 290.0)

    def __init__(self, label: str, f0_min: float, f0_max: float):
        self.label = label
        self.f0_min = f0_min
        self.f0_max = f0_max

    @property
    def index(self) -> int:
        return list(VoicePart).index(self)

    @classmethod
    def from_name(cls, name: str) -> "VoicePart":
        for part in cls:
            if part.label.lower() == name.lower() or part.name.lower() == name.lower():
                return part
        raise ValueError(f"unknown voice part {name!r}")

    def contains(self, hz: float, tolerance: float = 1.0) -> bool:
        return self.f0_min / tolerance <= hz <= self.f0_max * tolerance


PARTS = tuple(VoicePart)


class RangeError(ValueError):
    pass


@dataclass
class Stem:
    part: VoicePart
    singer_id: str
    piece_id: str
    audio: AudioClip
    f0: F0Track | None = None
    source: str | None = None  # file path for ingested / persisted stems

    @property
    def key(self) -> tuple[str, str]:
        return (self.piece_id, self.singer_id)


@dataclass
class QuartetMix:
    stems: dict[VoicePart, Stem]
    mixture: AudioClip | None  # None for metadata-only mixes; see ``materialise``
    scale: float
    mix_id: str
    split: str = ""

    @property
    def piece_id(self) -> str:
        return next(iter(self.stems.values())).piece_id

    def scaled_stem(self, part: VoicePart) -> np.ndarray:
        return self.scale * self.stems[part].audio.samples

    def manifest_entry(self) -> dict:
        return {
            "mix_id": self.mix_id,
            "piece_id": self.piece_id,
            "stems": {p.label: (self.stems[p].source or self.stems[p].singer_id) for p in PARTS},
            "singers": {p.label: self.stems[p].singer_id for p in PARTS},
            "scale": self.scale,
            "split": self.split,
        }


@dataclass
class UnisonMix:
    """Several singers per part; ``f0`` holds the frame-wise mean F0 per part."""

    stems: dict[VoicePart, list[Stem]]
    mixture: AudioClip
    scale: float
    f0: dict[VoicePart, F0Track]
    mix_id: str

    @property
    def piece_id(self) -> str:
        return self.stems[PARTS[0]][0].piece_id

    def scaled_stem(self, part: VoicePart) -> np.ndarray:
        return self.scale * np.sum([s.audio.samples for s in self.stems[part]], axis=0)


@dataclass
class SplitPlan:
    train: list[QuartetMix] = field(default_factory=list)
    test_case1: list[QuartetMix] = field(default_factory=list)
    test_case2: list[UnisonMix] = field(default_factory=list)

    def leaked_pairs(self) -> set[tuple[str, str]]:
        seen = {s.key for m in self.train for s in m.stems.values()}
        held = {s.key for m in self.test_case1 for s in m.stems.values()}
        return seen & held


# ---------------------------------------------------------------------------
# synthesis

# fixed resonances (centre Hz, bandwidth Hz) of the formant-like filter
FORMANTS = ((600.0, 100.0), (1400.0, 120.0), (2600.0, 160.0))
VIBRATO_HZ = 5.0
VIBRATO_CENTS = 20.0
GLIDE_S = 0.03
ATTACK_S = 0.04
RELEASE_S = 0.06
MIN_HARMONICS = 10


def formant_gain(freq: np.ndarray) -> np.ndarray:
    """Parallel bank of three second-order resonances, each with unity gain at DC.

    A parallel sum keeps every partial up to the synthesis cutoff audible; a
    cascade would roll off too steeply above the last formant.
    """
    g = np.zeros_like(freq, dtype=float)
    for fc, bw in FORMANTS:
        r = freq / fc
        g = g + 1 / np.sqrt((1 - r**2) ** 2 + (freq * bw / fc**2) ** 2)
    return g / len(FORMANTS)


def _phrases(voiced: np.ndarray) -> list[tuple[int, int]]:
    edges = np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def synthesize_stem(
    part: VoicePart,
    score: Iterable[tuple[float, float]],
    sample_rate: int = SAMPLE_RATE,
    seed: int = 0,
    singer_id: str | None = None,
    piece_id: str = "synthetic",
    hop: int = HOP,
) -> Stem:
    """Render a harmonic voice for ``score`` (a list of ``(note_hz, duration_s)``, 0 = rest).

    Consecutive notes are sung legato with a short log-frequency glide; every
    phrase gets an attack/release fade, and a slow amplitude wobble plus
    vibrato are applied throughout. ``seed`` fixes the singer-specific vibrato
    phase, wobble, harmonic phases and harmonic gain jitter.
    """
    score = [(float(hz), float(dur)) for hz, dur in score]
    if sample_rate < 16000:
        raise ValueError(f"sample_rate must be >= 16000, got {sample_rate}")
    for hz, dur in score:
        if dur <= 0:
            raise ValueError(f"note duration must be positive, got {dur}")
        if hz != 0 and not part.contains(hz):
            raise RangeError(
                f"{part.label}: note {hz:.1f} Hz outside range [{part.f0_min:g}, {part.f0_max:g}] Hz"
            )
    rng = np.random.default_rng(seed)

    bounds = np.round(np.cumsum([0.0] + [d for _, d in score]) * sample_rate).astype(int)
    n = int(bounds[-1])
    target = np.zeros(n)
    for (hz, _), a, b in zip(score, bounds[:-1], bounds[1:]):
        target[a:b] = hz
    voiced = target > 0

    # log-frequency glides between legato notes
    log_f = np.zeros(n)
    log_f[voiced] = np.log(target[voiced])
    glide = max(int(GLIDE_S * sample_rate), 1)
    for a in bounds[1:-1]:
        if 0 < a < n and voiced[a - 1] and voiced[a] and target[a - 1] != target[a]:
            lo, hi = max(a - glide // 2, 0), min(a + glide // 2, n)
            ramp = 0.5 - 0.5 * np.cos(np.pi * np.linspace(0, 1, hi - lo))
            log_f[lo:hi] = np.log(target[a - 1]) + ramp * (np.log(target[a]) - np.log(target[a - 1]))

    t = np.arange(n) / sample_rate
    vib_phase = rng.uniform(0, 2 * np.pi)
    cents = VIBRATO_CENTS * np.sin(2 * np.pi * VIBRATO_HZ * t + vib_phase)
    f_inst = np.where(voiced, np.exp(log_f) * 2.0 ** (cents / 1200), 0.0)

    env = np.zeros(n)
    attack, release = int(ATTACK_S * sample_rate), int(RELEASE_S * sample_rate)
    for a, b in _phrases(voiced):
        seg = np.ones(b - a)
        na, nr = min(attack, (b - a) // 2), min(release, (b - a) // 2)
        seg[:na] = 0.5 - 0.5 * np.cos(np.pi * np.arange(na) / max(na, 1))
        if nr:
            seg[-nr:] = 0.5 + 0.5 * np.cos(np.pi * (np.arange(nr) + 1) / nr)
        env[a:b] = seg
    wobble_rate = rng.uniform(0.3, 0.8)
    env *= 1.0 + 0.15 * np.sin(2 * np.pi * wobble_rate * t + rng.uniform(0, 2 * np.pi))

    phase = 2 * np.pi * np.cumsum(f_inst) / sample_rate
    nyq_limit = 0.45 * sample_rate
    n_harm = max(MIN_HARMONICS, int(nyq_limit // max(f_inst.max(initial=0.0), part.f0_min)))
    jitter = 10 ** (rng.uniform(-1.5, 1.5, n_harm) / 20)
    offsets = rng.uniform(0, 2 * np.pi, n_harm)
    y = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * f_inst
        amp = np.where(fk < nyq_limit, jitter[k - 1] * formant_gain(fk) / k, 0.0)
        y += amp * np.sin(k * phase + offsets[k - 1])
    y *= env
    peak = np.max(np.abs(y)) if n else 0.0
    if peak > 0:
        y *= PEAK_TARGET / peak

    frames = np.arange(n_frames_for(n, hop)) * hop
    f0 = np.where(env[frames] > 0, f_inst[frames], 0.0)
    return Stem(
        part=part,
        singer_id=singer_id if singer_id is not None else f"{part.label.lower()}{seed}",
        piece_id=piece_id,
        audio=AudioClip(y, sample_rate),
        f0=F0Track(f0, hop, sample_rate),
    )


# comfortable MIDI ranges inside each part's F0 range
_MIDI_RANGE = {
    VoicePart.SOPRANO: (62, 77),
    VoicePart.ALTO: (55, 72),
    VoicePart.TENOR: (50, 67),
    VoicePart.BASS: (43, 60),
}
_MAJOR = (0, 2, 4, 5, 7, 9, 11)
_PROGRESSION_STEPS = {0: (3, 4, 5, 1), 1: (4, 6), 2: (5, 3), 3: (4, 0, 1), 4: (0, 5), 5: (3, 1, 4), 6: (0,)}


def midi_to_hz(m) -> np.ndarray:
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69) / 12)


def generate_piece(
    seed: int, duration_s: float = 12.0, rest_prob: float = 0.06
) -> dict[VoicePart, list[tuple[float, float]]]:
    """Homophonic four-part chorale: diatonic triads voiced S > A > T > B with
    nearest-tone voice leading and a shared rhythm. Parts rest independently."""
    rng = np.random.default_rng(seed)
    tonic = int(rng.integers(0, 12))
    durations = []
    while sum(durations) < duration_s:
        durations.append(float(rng.choice([0.4, 0.6, 0.8, 1.0, 1.2])))
    durations[-1] = max(duration_s - sum(durations[:-1]), 0.2)

    degree = 0
    prev = {p: None for p in PARTS}
    scores = {p: [] for p in PARTS}
    for dur in durations:
        chord = {(tonic + _MAJOR[(degree + i) % 7]) % 12 for i in (0, 2, 4)}
        ceiling = 128
        for part in PARTS:  # top-down so each part sits strictly below the one above
            lo, hi = _MIDI_RANGE[part]
            opts = [m for m in range(lo, min(hi, ceiling - 1) + 1) if m % 12 in chord]
            if not opts:
                opts = [min(hi, ceiling - 1)]
            ref = prev[part] if prev[part] is not None else (lo + hi) / 2 + rng.normal(0, 2)
            weights = np.exp(-np.abs(np.asarray(opts) - ref) / 2.0)
            m = int(rng.choice(opts, p=weights / weights.sum()))
            prev[part] = m
            ceiling = m
            hz = 0.0 if rng.random() < rest_prob else float(midi_to_hz(m))
            scores[part].append((hz, dur))
        degree = int(rng.choice(_PROGRESSION_STEPS[degree]))
    return scores


def synthesize_piece(
    piece_id: str,
    singers_per_part: int,
    seed: int,
    duration_s: float = 12.0,
    sample_rate: int = SAMPLE_RATE,
) -> dict[VoicePart, list[Stem]]:
    """All singers of a part sing the same score; singers differ by seed."""
    scores = generate_piece(seed, duration_s)
    stems: dict[VoicePart, list[Stem]] = {}
    for part in PARTS:
        stems[part] = [
            synthesize_stem(
                part,
                scores[part],
                sample_rate,
                seed=seed * 1000 + part.index * 100 + k,
                singer_id=f"{part.label.lower()}{k + 1}",
                piece_id=piece_id,
            )
            for k in range(singers_per_part)
        ]
    return stems


# ---------------------------------------------------------------------------
# mixing


def _shared_scale(total: np.ndarray) -> float:
    peak = float(np.max(np.abs(total))) if total.size else 0.0
    return 1.0 if peak <= 1.0 else 1.0 / peak


def _check_lengths(stems: Iterable[Stem]) -> int:
    lengths = {len(s.audio) for s in stems}
    if len(lengths) != 1:
        raise ValueError(f"stems have mismatched lengths {sorted(lengths)}")
    return lengths.pop()


def mix_quartet(stems: Mapping[VoicePart, Stem], mix_id: str | None = None, keep_audio: bool = True) -> QuartetMix:
    if set(stems) != set(PARTS):
        raise ValueError("a quartet needs exactly one stem per voice part")
    _check_lengths(stems.values())
    total = np.sum([stems[p].audio.samples for p in PARTS], axis=0)
    scale = _shared_scale(total)
    if mix_id is None:
        mix_id = stems[PARTS[0]].piece_id + "__" + "_".join(stems[p].singer_id for p in PARTS)
    sr = stems[PARTS[0]].audio.sample_rate
    mixture = AudioClip(scale * total, sr) if keep_audio else None
    return QuartetMix(dict(stems), mixture, scale, mix_id)


def materialise(mix: QuartetMix) -> QuartetMix:
    """Return ``mix`` with its mixture signal present."""
    if mix.mixture is not None:
        return mix
    out = mix_quartet(mix.stems, mix.mix_id)
    out.split = mix.split
    return out


def enumerate_quartets(stems_by_part: Mapping[VoicePart, list[Stem]], keep_audio: bool = True) -> list[QuartetMix]:
    """Every combination of one singer per part (cartesian product).

    With ``keep_audio=False`` the mixtures are not stored, which keeps large
    enumerations (256 quartets per piece at four singers) cheap.
    """
    for part in PARTS:
        if not stems_by_part.get(part):
            raise ValueError(f"no stems for part {part.label}")
    pieces = {s.piece_id for p in PARTS for s in stems_by_part[p]}
    if len(pieces) != 1:
        raise ValueError(f"quartets must come from a single piece, got {sorted(pieces)}")
    return [
        mix_quartet(dict(zip(PARTS, combo)), keep_audio=keep_audio)
        for combo in itertools.product(*(stems_by_part[p] for p in PARTS))
    ]


def mean_f0(tracks: list[F0Track]) -> F0Track:
    """Frame-wise mean over the voiced tracks; unvoiced where none is voiced."""
    n = max(len(t) for t in tracks)
    stack = np.zeros((len(tracks), n))
    for i, t in enumerate(tracks):
        stack[i, : len(t)] = t.values
    count = (stack > 0).sum(axis=0)
    out = np.where(count > 0, stack.sum(axis=0) / np.maximum(count, 1), 0.0)
    return F0Track(out, tracks[0].hop, tracks[0].sample_rate)


def make_unison_mix(
    stems_by_part: Mapping[VoicePart, list[Stem]], mix_id: str | None = None, require_f0: bool = True
) -> UnisonMix:
    """Sum of every stem; with ``require_f0=False`` parts lacking F0 get no mean track."""
    for part in PARTS:
        if len(stems_by_part.get(part, [])) < 2:
            raise ValueError(f"unison mix needs >= 2 singers for {part.label}")
        if require_f0 and any(s.f0 is None for s in stems_by_part[part]):
            raise ValueError(f"unison mix needs F0 tracks for every {part.label} stem")
    all_stems = [s for p in PARTS for s in stems_by_part[p]]
    _check_lengths(all_stems)
    total = np.sum([s.audio.samples for s in all_stems], axis=0)
    scale = _shared_scale(total)
    f0 = {
        p: mean_f0([s.f0 for s in stems_by_part[p]])
        for p in PARTS
        if all(s.f0 is not None for s in stems_by_part[p])
    }
    piece = all_stems[0].piece_id
    return UnisonMix(
        {p: list(stems_by_part[p]) for p in PARTS},
        AudioClip(scale * total, all_stems[0].audio.sample_rate),
        scale,
        f0,
        mix_id or f"{piece}__unison{len(all_stems)}",
    )


def make_split(
    quartets: list[QuartetMix],
    test_pieces: Iterable[str] = (),
    held_out_singers: Mapping[str, Mapping[VoicePart, str]] | None = None,
    unison: list[UnisonMix] | None = None,
) -> SplitPlan:
    """Assign quartets to train / test_case1.

    Mixes of a held-out piece go to test. For other pieces,
    ``held_out_singers[piece][part]`` names one held-out singer per part: the
    quartet made only of held-out singers is a test mix, and any quartet that
    uses a held-out singer is dropped from training.
    """
    test_pieces = set(test_pieces)
    held = held_out_singers or {}
    plan = SplitPlan(test_case2=list(unison or []))
    for mix in quartets:
        piece = mix.piece_id
        if piece in test_pieces:
            mix.split = "test_case1"
            plan.test_case1.append(mix)
            continue
        ho = held.get(piece, {})
        uses = [mix.stems[p].singer_id == ho.get(p) for p in PARTS]
        if ho and all(uses):
            mix.split = "test_case1"
            plan.test_case1.append(mix)
        elif not any(uses):
            mix.split = "train"
            plan.train.append(mix)
    for m in plan.test_case2:
        if any(len(m.stems[p]) < 2 for p in PARTS):
            raise ValueError("test_case2 mixes need more than one singer per part")
    if plan.leaked_pairs():
        raise AssertionError(f"train/test leakage: {sorted(plan.leaked_pairs())}")
    return plan


# ---------------------------------------------------------------------------
# ingestion and curation

_PART_TOKEN = re.compile(r"(soprano|alto|tenor|bass)", re.IGNORECASE)
_SNIPPET = re.compile(r"^(?P<base>.+?)_(?P<idx>\d+)$")


def _natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok.lower() for tok in re.split(r"(\d+)", name)]


def ingest_directory(root: str | Path, snippet_pattern: str | None = _SNIPPET.pattern) -> list[Stem]:
    """Read a CSD-style tree ``root/<piece>/*.wav``.

    The voice part is taken from a soprano/alto/tenor/bass token in the file
    name; the singer id is the file stem with any trailing ``_<n>`` snippet
    index removed. Snippets of one singer are concatenated in filename order.
    Pass ``snippet_pattern=None`` when trailing numbers name singers instead.
    """
    snippet = re.compile(snippet_pattern) if snippet_pattern else None
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"corpus root {root} is not a directory")
    stems: list[Stem] = []
    for piece_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        groups: dict[str, list[Path]] = {}
        for wav in sorted(piece_dir.glob("*.wav"), key=lambda p: _natural_key(p.name)):
            m = snippet.match(wav.stem) if snippet else None
            base = m.group("base") if m else wav.stem
            groups.setdefault(base, []).append(wav)
        for base, files in groups.items():
            token = _PART_TOKEN.search(base)
            if token is None:
                logger.warning("%s: no voice part token in name, skipped", files[0])
                continue
            clips = [read_wav(f) for f in files]
            rates = {c.sample_rate for c in clips}
            if len(rates) != 1:
                clips = [resample(c, clips[0].sample_rate) for c in clips]
            audio = AudioClip(np.concatenate([c.samples for c in clips]), clips[0].sample_rate)
            stems.append(Stem(VoicePart.from_name(token.group(1)), base, piece_dir.name, audio,
                              source=str(files[0])))
    return stems


def curate(raw_stems: list[Stem], target_sample_rate: int = SAMPLE_RATE) -> list[Stem]:
    """Resample to ``target_sample_rate``, trim each piece to its shortest stem
    and peak-normalise every stem to 0.95."""
    resampled = []
    for s in raw_stems:
        audio = resample(s.audio, target_sample_rate)
        f0 = s.f0
        if f0 is not None and f0.sample_rate != target_sample_rate:
            f0 = None  # frame grid no longer matches; re-derive downstream
        resampled.append(Stem(s.part, s.singer_id, s.piece_id, audio, f0, s.source))
    shortest: dict[str, int] = {}
    for s in resampled:
        shortest[s.piece_id] = min(shortest.get(s.piece_id, len(s.audio)), len(s.audio))
    out = []
    for s in resampled:
        n = shortest[s.piece_id]
        x = s.audio.samples[:n]
        peak = np.max(np.abs(x)) if n else 0.0
        if peak > 0:
            x = x * (PEAK_TARGET / peak)
        f0 = s.f0
        if f0 is not None:
            f0 = F0Track(f0.values[: n_frames_for(max(n, 1), f0.hop)], f0.hop, f0.sample_rate)
        out.append(Stem(s.part, s.singer_id, s.piece_id, AudioClip(x, target_sample_rate), f0, s.source))
    return out


def group_by_piece(stems: Iterable[Stem]) -> dict[str, dict[VoicePart, list[Stem]]]:
    out: dict[str, dict[VoicePart, list[Stem]]] = {}
    for s in stems:
        out.setdefault(s.piece_id, {p: [] for p in PARTS})[s.part].append(s)
    return out


# ---------------------------------------------------------------------------
# manifest


def write_manifest(path: str | Path, mixes: Iterable[QuartetMix]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for mix in mixes:
            fh.write(json.dumps(mix.manifest_entry(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
