"""Run configuration: one plain-text file of flat dotted ``key = value`` lines.

Precedence, lowest first: built-in defaults, the config file, ``SATBSEP_*``
environment variables, then ``--set key=value`` flags.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .audio import SAMPLE_RATE
from .dsp import FFT_SIZE, HOP, PATCH_FRAMES
from .nets import KINDS

ENV_PREFIX = "SATBSEP_"
F0_MODES = ("oracle", "estimated")


class ConfigError(ValueError):
    """Unknown key, unparsable value or unsupported setting."""


@dataclass
class PathsConfig:
    corpus_root: str = "corpus"
    checkpoint_dir: str = "checkpoints"
    results_dir: str = "results"
    report_dir: str = "reports"


@dataclass
class CorpusConfig:
    pieces: int = 3
    singers_per_part: int = 4
    duration_s: float = 12.0
    test_pieces: int = 1
    hold_out_singer: bool = False


@dataclass
class DspConfig:
    sample_rate: int = SAMPLE_RATE
    fft_size: int = FFT_SIZE
    hop: int = HOP
    patch_frames: int = PATCH_FRAMES


@dataclass
class ModelSection:
    kind: str = "cunet_ds_global"
    encoder_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256, 512])
    dropout: float = 0.5


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_steps: int = 2000
    patch_hop: int = 64
    checkpoint_every: int = 500
    eval_every: int = 100
    patience: int = 10
    val_fraction: float = 0.1


@dataclass
class EvalSection:
    use_case: str = "quartet"
    workers: int = 4


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    f0_mode: str = "oracle"
    seed: int = 0

    # -- flat view ---------------------------------------------------------

    @classmethod
    def keys(cls) -> list[str]:
        out = []
        for f in dataclasses.fields(cls):
            section = f.default_factory
            if section is not dataclasses.MISSING and dataclasses.is_dataclass(section):
                out += [f"{f.name}.{g.name}" for g in dataclasses.fields(section)]
            else:
                out.append(f.name)
        return out

    def _locate(self, key: str):
        head, _, tail = key.partition(".")
        if key not in self.keys():
            raise ConfigError(f"unknown config key {key!r}")
        return (getattr(self, head), tail) if tail else (self, head)

    def get(self, key: str):
        obj, name = self._locate(key)
        return getattr(obj, name)

    def set(self, key: str, raw) -> None:
        obj, name = self._locate(key)
        current = getattr(obj, name)
        setattr(obj, name, _coerce(key, raw, current))

    def flat(self) -> dict[str, object]:
        return {k: self.get(k) for k in self.keys()}

    # -- text form ----------------------------------------------------------

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.flat().items())

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def validate(self) -> "RunConfig":
        if self.model.kind not in KINDS:
            raise ConfigError(f"model.kind must be one of {KINDS}, got {self.model.kind!r}")
        if self.f0_mode not in F0_MODES:
            raise ConfigError(f"f0_mode must be one of {F0_MODES}, got {self.f0_mode!r}")
        if self.eval.use_case not in ("quartet", "unison16"):
            raise ConfigError(f"eval.use_case must be quartet or unison16, got {self.eval.use_case!r}")
        fixed = {"dsp.sample_rate": SAMPLE_RATE, "dsp.fft_size": FFT_SIZE, "dsp.hop": HOP,
                 "dsp.patch_frames": PATCH_FRAMES}
        for key, supported in fixed.items():
            if self.get(key) != supported:
                raise ConfigError(f"{key}={self.get(key)} is not supported; the networks are built for {supported}")
        if self.corpus.pieces < 1 or self.corpus.singers_per_part < 1:
            raise ConfigError("corpus.pieces and corpus.singers_per_part must be >= 1")
        if not 0 <= self.corpus.test_pieces <= self.corpus.pieces:
            raise ConfigError("corpus.test_pieces must lie between 0 and corpus.pieces")
        if self.eval.workers < 1:
            raise ConfigError("eval.workers must be >= 1")
        return self


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw, current):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def loads(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for key, value in parse_text(text, source).items():
        cfg.set(key, value)
    return cfg


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """``SATBSEP_TRAIN_MAX_STEPS=50`` overrides ``train.max_steps``."""
    environ = os.environ if environ is None else environ
    by_env = {ENV_PREFIX + k.replace(".", "_").upper(): k for k in RunConfig.keys()}
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        if name not in by_env:
            raise ConfigError(f"environment variable {name} matches no config key")
        out[by_env[name]] = value
    return out


def resolve(
    path: str | Path | None = None,
    overrides: Mapping[str, str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        for key, value in parse_text(path.read_text(), str(path)).items():
            cfg.set(key, value)
    for key, value in env_overrides(environ).items():
        cfg.set(key, value)
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
    return cfg.validate()
