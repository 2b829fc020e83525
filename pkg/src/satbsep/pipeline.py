"""Training, full-length separation and the two evaluation use cases."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .audio import AudioClip, write_wav
from .bsseval import MetricsRecord, sdr_sir_sar
from .corpus import PARTS, QuartetMix, UnisonMix, VoicePart, materialise
from .dsp import HOP, PATCH_FRAMES, reconstruct, stft
from .nets import Checkpoint, ModelConfig, build_model, save_checkpoint
from .pitch import F0Track, encode_control, estimate_f0

logger = logging.getLogger(__name__)

EPS = 1e-8
WAVE_WINDOW = 16384


class ConfigurationError(ValueError):
    pass


@dataclass
class TrainSpec:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_steps: int = 2000
    patch_hop: int = 64
    loss: str = "l1_mag"
    seed: int = 0
    checkpoint_every: int = 500
    eval_every: int = 100
    patience: int = 10
    val_fraction: float = 0.1
    silence_db: float = -60.0
    silence_weight: float = 0.1

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.loss != "l1_mag":
            raise ConfigurationError(f"unsupported loss {self.loss!r}")
        if not 1 <= self.patch_hop <= PATCH_FRAMES:
            raise ConfigurationError(f"patch_hop must be in [1, {PATCH_FRAMES}]")


def one_hot_part(part: VoicePart) -> np.ndarray:
    z = np.zeros(len(PARTS), dtype=np.float32)
    z[part.index] = 1.0
    return z


def normalise_patch(mix_mag: np.ndarray) -> float:
    return float(mix_mag.max()) + EPS


# ---------------------------------------------------------------------------
# training data


class PatchDataset:
    """Patches drawn on the fly from cached per-stem STFTs.

    Mixtures are rebuilt as ``scale * sum(stem STFTs)`` so that quartets sharing
    stems share memory.
    """

    def __init__(self, mixes: Sequence[QuartetMix], patch_hop: int, need_f0: bool):
        self.mixes = list(mixes)
        self.spec: dict[tuple[str, str], np.ndarray] = {}
        self.audio: dict[tuple[str, str], np.ndarray] = {}
        self.f0: dict[tuple[str, str], np.ndarray] = {}
        for mix in self.mixes:
            for part, stem in mix.stems.items():
                if stem.key in self.spec:
                    continue
                if need_f0 and stem.f0 is None:
                    raise ConfigurationError(
                        f"stem {stem.piece_id}/{stem.singer_id} ({part.label}) has no F0 track; "
                        "pitch-conditioned training needs F0 for every stem"
                    )
                self.spec[stem.key] = stft(stem.audio).values.astype(np.complex64)
                self.audio[stem.key] = stem.audio.samples
                if stem.f0 is not None:
                    self.f0[stem.key] = stem.f0.values
        self.items = []
        for i, mix in enumerate(self.mixes):
            n_frames = self.spec[mix.stems[PARTS[0]].key].shape[1]
            self.items += [(i, off) for off in range(0, n_frames, patch_hop)]

    def _window(self, x: np.ndarray, off: int) -> np.ndarray:
        w = x[:, off : off + PATCH_FRAMES]
        if w.shape[1] < PATCH_FRAMES:
            w = np.pad(w, ((0, 0), (0, PATCH_FRAMES - w.shape[1])))
        return w

    def example(self, item: int, part: VoicePart) -> dict:
        i, off = self.items[item]
        mix = self.mixes[i]
        total = sum(self.spec[mix.stems[p].key] for p in PARTS)
        stem = mix.stems[part]
        mix_mag = np.abs(self._window(total, off)) * mix.scale
        tgt_mag = np.abs(self._window(self.spec[stem.key], off)) * mix.scale
        norm = normalise_patch(mix_mag)
        seg = self.audio[stem.key][off * HOP : (off + PATCH_FRAMES) * HOP] * mix.scale
        rms = float(np.sqrt(np.mean(seg**2))) if seg.size else 0.0
        out = {
            "mix": (mix_mag / norm).astype(np.float32),
            "target": (tgt_mag / norm).astype(np.float32),
            "rms": rms,
            "onehot": one_hot_part(part),
        }
        if stem.key in self.f0:
            out["control"] = encode_control(self.f0[stem.key], off)
        return out


def _collate(examples: list[dict], spec: TrainSpec) -> dict:
    threshold = 10 ** (spec.silence_db / 20)
    batch = {
        "mix": torch.from_numpy(np.stack([e["mix"] for e in examples]))[:, None],
        "target": torch.from_numpy(np.stack([e["target"] for e in examples]))[:, None],
        "onehot": torch.from_numpy(np.stack([e["onehot"] for e in examples])),
        "weight": torch.tensor(
            [1.0 if e["rms"] >= threshold else spec.silence_weight for e in examples]
        ),
    }
    if all("control" in e for e in examples):
        batch["control"] = torch.from_numpy(np.stack([e["control"] for e in examples]))
    return batch


def _mask_loss(model, batch: dict, kind: str) -> torch.Tensor:
    x = batch["mix"]
    if kind == "unet":
        mask = model(x)
    elif kind == "cunet_da":
        mask = model(x, batch["onehot"])
    else:
        mask = model(x, batch["control"])
    per_example = (mask * x - batch["target"]).abs().mean(dim=(1, 2, 3))
    return (per_example * batch["weight"]).mean()


class WaveDataset:
    def __init__(self, mixes: Sequence[QuartetMix]):
        self.mixes = list(mixes)

    def example(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        mix = self.mixes[int(rng.integers(len(self.mixes)))]
        n = len(mix.stems[PARTS[0]].audio)
        start = int(rng.integers(0, max(n - WAVE_WINDOW, 0) + 1))
        sl = slice(start, start + WAVE_WINDOW)

        def cut(x):
            x = x[sl]
            return np.pad(x, (0, WAVE_WINDOW - x.size))

        # built from the stems so metadata-only mixes train too
        sources = np.stack([cut(mix.scaled_stem(p)) for p in PARTS])
        return sources.sum(axis=0).astype(np.float32), sources.astype(np.float32)


# ---------------------------------------------------------------------------
# training


def _split_validation(mixes: list[QuartetMix], spec: TrainSpec) -> tuple[list, list]:
    n_val = int(np.floor(spec.val_fraction * len(mixes)))
    if n_val == 0:
        return mixes, []
    order = np.random.default_rng(spec.seed).permutation(len(mixes))
    val = set(order[:n_val].tolist())
    return [m for i, m in enumerate(mixes) if i not in val], [m for i, m in enumerate(mixes) if i in val]


def _train_one(
    spec: TrainSpec,
    config: ModelConfig,
    train_mixes: list[QuartetMix],
    val_mixes: list[QuartetMix],
    out_dir: Path | None,
    tag: str,
) -> Checkpoint:
    torch.manual_seed(spec.seed)
    rng = np.random.default_rng(spec.seed)
    model = build_model(config, spec.seed)
    model.train()
    optimiser = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    kind = config.kind
    fixed_part = VoicePart.from_name(config.target_part) if config.target_part else None

    if kind == "waveunet":
        data = WaveDataset(train_mixes)
        val_data = WaveDataset(val_mixes) if val_mixes else None
    else:
        data = PatchDataset(train_mixes, spec.patch_hop, config.pitch_conditioned)
        val_data = PatchDataset(val_mixes, PATCH_FRAMES, config.pitch_conditioned) if val_mixes else None

    def batch_loss(batch_examples):
        if kind == "waveunet":
            x = torch.from_numpy(np.stack([e[0] for e in batch_examples]))[:, None]
            y = torch.from_numpy(np.stack([e[1] for e in batch_examples]))
            return F.l1_loss(model(x), y)
        return _mask_loss(model, _collate(batch_examples, spec), kind)

    def draw():
        if kind == "waveunet":
            return data.example(rng)
        item = int(rng.integers(len(data.items)))
        part = fixed_part if fixed_part is not None else PARTS[int(rng.integers(len(PARTS)))]
        return data.example(item, part)

    def validation_loss() -> float:
        model.eval()
        losses = []
        with torch.no_grad():
            if kind == "waveunet":
                vrng = np.random.default_rng(spec.seed + 1)
                for _ in range(8):
                    losses.append(float(batch_loss([val_data.example(vrng)])))
            else:
                parts = [fixed_part] if fixed_part is not None else list(PARTS)
                exs = [val_data.example(i, p) for i in range(len(val_data.items)) for p in parts]
                for j in range(0, len(exs), 8):
                    losses.append(float(batch_loss(exs[j : j + 8])) * len(exs[j : j + 8]))
                losses = [sum(losses) / len(exs)]
        model.train()
        return float(np.mean(losses))

    history = []
    best = (np.inf, None, 0)
    bad_evals = 0
    log_fh = open(out_dir / f"train_log{tag}.jsonl", "w") if out_dir else None
    step = 0
    try:
        for step in range(1, spec.max_steps + 1):
            loss = batch_loss([draw() for _ in range(spec.batch_size)])
            optimiser.zero_grad()
            loss.backward()
            optimiser.step()
            record = {"step": step, "loss": loss.item()}
            if not np.isfinite(record["loss"]):
                raise FloatingPointError(f"non-finite training loss at step {step}")
            if val_data is not None and step % spec.eval_every == 0:
                v = validation_loss()
                record["val_loss"] = v
                if v < best[0]:
                    best = (v, copy.deepcopy(model.state_dict()), step)
                    bad_evals = 0
                else:
                    bad_evals += 1
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            if out_dir and step % spec.checkpoint_every == 0:
                save_checkpoint(out_dir / f"model{tag}_step{step}.ckpt",
                                Checkpoint(model, config, step, spec.seed))
            if val_data is not None and bad_evals >= spec.patience:
                logger.info("early stop at step %d (best %d)", step, best[2])
                break
    finally:
        if log_fh:
            log_fh.close()
    if best[1] is not None:
        model.load_state_dict(best[1])
        step = best[2]
    model.eval()
    ckpt = Checkpoint(model, config, step, spec.seed, {"train_spec": _spec_dict(spec)})
    ckpt.history = history
    if out_dir:
        save_checkpoint(out_dir / f"model{tag}.ckpt", ckpt)
    return ckpt


def _spec_dict(spec: TrainSpec) -> dict:
    d = asdict(spec)
    d.pop("model")
    return d


def train(spec: TrainSpec, train_mixes: Sequence[QuartetMix], out_dir: str | Path | None = None) -> list[Checkpoint]:
    """Fit the configured model; plain U-Nets yield one checkpoint per part."""
    mixes = list(train_mixes)
    if not mixes:
        raise ConfigurationError("training split is empty")
    config = spec.model
    if config.pitch_conditioned:
        missing = [s for m in mixes for s in m.stems.values() if s.f0 is None]
        if missing:
            raise ConfigurationError(
                f"{len(missing)} training stems lack F0 tracks required by {config.kind}"
            )
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    fit, val = _split_validation(mixes, spec)
    if config.kind == "unet":
        return [
            _train_one(spec, ModelConfig(**{**asdict(config), "target_part": p.label}), fit, val, out,
                       f"_{p.label.lower()}")
            for p in PARTS
        ]
    return [_train_one(spec, config, fit, val, out, "")]


# ---------------------------------------------------------------------------
# inference


@dataclass
class SeparationResult:
    estimates: dict[VoicePart, AudioClip]
    mixture: AudioClip
    f0s: dict[VoicePart, F0Track] | None
    checkpoint_id: str
    mix_id: str = ""
    f0_source: str | None = None
    use_case: str | None = None
    metrics: list[MetricsRecord] = field(default_factory=list)


def _masks(model, kind: str, mix_spec, conditions: Sequence, batch: int = 8) -> np.ndarray:
    """Stitched ``[512, T]`` mask from non-overlapping patches."""
    mag = mix_spec.magnitude
    n_frames = mag.shape[1]
    offsets = list(range(0, n_frames, PATCH_FRAMES))
    mask = np.zeros_like(mag)
    with torch.no_grad():
        for j in range(0, len(offsets), batch):
            chunk = offsets[j : j + batch]
            xs = []
            for off in chunk:
                w = mag[:, off : off + PATCH_FRAMES]
                w = np.pad(w, ((0, 0), (0, PATCH_FRAMES - w.shape[1])))
                xs.append(w / normalise_patch(w))
            x = torch.from_numpy(np.stack(xs).astype(np.float32))[:, None]
            if kind == "unet":
                m = model(x)
            else:
                z = torch.from_numpy(np.stack([conditions[o] for o in chunk]))
                m = model(x, z)
            for k, off in enumerate(chunk):
                n = min(PATCH_FRAMES, n_frames - off)
                mask[:, off : off + n] = m[k, 0, :, :n].numpy()
    return mask


def separate(
    mixture: AudioClip,
    checkpoints: Sequence[Checkpoint],
    f0s: Mapping[VoicePart, F0Track] | None = None,
    mix_id: str = "",
) -> SeparationResult:
    """Separate a full-length mixture into the four parts.

    Conditioned models run once per part with that part's control input.
    """
    checkpoints = list(checkpoints)
    kind = checkpoints[0].config.kind
    ckpt_id = "+".join(c.checkpoint_id for c in checkpoints)
    for c in checkpoints:
        c.model.eval()
    n = len(mixture)

    if kind == "waveunet":
        model = checkpoints[0].model
        mult = model.multiple
        padded = np.pad(mixture.samples, (0, (-n) % mult)).astype(np.float32)
        with torch.no_grad():
            out = model(torch.from_numpy(padded)[None, None])[0].numpy().astype(np.float64)
        est = {p: AudioClip(out[p.index, :n], mixture.sample_rate) for p in PARTS}
        return SeparationResult(est, mixture, None, ckpt_id, mix_id)

    spec = stft(mixture)
    n_frames = spec.n_frames
    if kind == "unet":
        if f0s:
            raise ConfigurationError("plain U-Net separation takes no F0 tracks")
        by_part = {VoicePart.from_name(c.config.target_part): c for c in checkpoints}
        if set(by_part) != set(PARTS):
            raise ConfigurationError("plain U-Net separation needs one checkpoint per part")
        masks = {p: _masks(by_part[p].model, kind, spec, []) for p in PARTS}
    else:
        model = checkpoints[0].model
        offsets = range(0, n_frames, PATCH_FRAMES)
        if checkpoints[0].config.pitch_conditioned:
            if not f0s or set(f0s) != set(PARTS):
                raise ConfigurationError(f"{kind} needs an F0 track for every part")
            for p, t in f0s.items():
                if len(t) != n_frames:
                    raise ValueError(
                        f"{p.label} F0 track has {len(t)} frames, mixture has {n_frames}"
                    )
            masks = {
                p: _masks(model, kind, spec, {o: encode_control(f0s[p], o) for o in offsets})
                for p in PARTS
            }
        else:
            masks = {p: _masks(model, kind, spec, {o: one_hot_part(p) for o in offsets}) for p in PARTS}
    est = {}
    for p in PARTS:
        y = reconstruct(masks[p], spec).samples[:n]
        est[p] = AudioClip(y, mixture.sample_rate)
    return SeparationResult(est, mixture, dict(f0s) if f0s else None, ckpt_id, mix_id)


def references_of(mix: QuartetMix | UnisonMix) -> list[np.ndarray]:
    return [mix.scaled_stem(p) for p in PARTS]


def score_result(result: SeparationResult, mix: QuartetMix | UnisonMix, model_id: str) -> list[MetricsRecord]:
    refs = references_of(mix)
    return [
        sdr_sir_sar(result.estimates[p], refs, p.index, p.label, mix.mix_id, model_id)
        for p in PARTS
    ]


def mixture_baseline(mix: QuartetMix | UnisonMix) -> list[MetricsRecord]:
    """Metrics of the unprocessed mixture used as every part's estimate."""
    if isinstance(mix, QuartetMix):
        mix = materialise(mix)
    refs = references_of(mix)
    return [
        sdr_sir_sar(mix.mixture, refs, p.index, p.label, mix.mix_id, "mixture")
        for p in PARTS
    ]


def conditioning_tracks(mix: QuartetMix | UnisonMix, f0_mode: str = "oracle") -> dict[VoicePart, F0Track]:
    """Per-part F0 used at test time: the stems' own tracks (``oracle``) or DIO-style
    estimates from each isolated stem (``estimated``); unison parts use the
    frame-wise mean over their singers."""
    from .corpus import mean_f0

    def track(stem):
        if f0_mode == "oracle":
            if stem.f0 is None:
                raise ConfigurationError(f"no oracle F0 for {stem.piece_id}/{stem.singer_id}")
            return stem.f0
        if f0_mode == "estimated":
            return estimate_f0(stem.audio)
        raise ConfigurationError(f"unknown f0 mode {f0_mode!r}")

    if isinstance(mix, UnisonMix):
        if f0_mode == "oracle":
            return dict(mix.f0)
        return {p: mean_f0([track(s) for s in mix.stems[p]]) for p in PARTS}
    return {p: track(mix.stems[p]) for p in PARTS}


def run_use_case(
    case: str,
    checkpoints: Sequence[Checkpoint],
    mixes: Sequence[QuartetMix | UnisonMix],
    f0_mode: str = "oracle",
    model_id: str | None = None,
) -> list[SeparationResult]:
    """Separate and score every test mixture of a use case (``quartet`` or ``unison16``)."""
    if case not in ("quartet", "unison16"):
        raise ValueError(f"unknown use case {case!r}")
    mixes = list(mixes)
    if not mixes:
        raise ValueError(f"use case {case} has no test mixtures")
    kind = checkpoints[0].config.kind
    model_id = model_id or kind
    results = []
    for mix in mixes:
        if case == "unison16" and not isinstance(mix, UnisonMix):
            raise ValueError("unison16 use case expects unison mixtures")
        if isinstance(mix, QuartetMix):
            mix = materialise(mix)
        f0s = conditioning_tracks(mix, f0_mode) if checkpoints[0].config.pitch_conditioned else None
        res = separate(mix.mixture, checkpoints, f0s, mix.mix_id)
        res.f0_source = f0_mode if f0s else None
        res.use_case = case
        res.metrics = score_result(res, mix, model_id)
        results.append(res)
    return results


def write_separation(out_dir: str | Path, result: SeparationResult, extra: dict | None = None) -> Path:
    """Write one WAV per part plus a JSON sidecar; returns the sidecar path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for p, clip in result.estimates.items():
        name = f"{result.mix_id or 'mix'}_{p.label.lower()}.wav"
        write_wav(out_dir / name, clip)
        files[p.label] = name
    sidecar = {
        "mix_id": result.mix_id,
        "checkpoint": result.checkpoint_id,
        "f0_source": result.f0_source,
        "use_case": result.use_case,
        "stems": files,
        **(extra or {}),
    }
    path = out_dir / f"{result.mix_id or 'mix'}.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path
