"""Spectrogram U-Net, its FiLM-conditioned variants, and a time-domain Wave-U-Net."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dsp import N_BINS, PATCH_FRAMES
from .film import FiLM, FilmParams, PitchConditionGenerator, SourceConditionGenerator
from .pitch import N_CONTROL_BINS

KINDS = ("unet", "cunet_da", "cunet_ds_local", "cunet_ds_global", "waveunet")
CONDITIONED = ("cunet_da", "cunet_ds_local", "cunet_ds_global")
PITCH_CONDITIONED = ("cunet_ds_local", "cunet_ds_global")

# display names, in the comparison order used by reports
DISPLAY_NAMES = {
    "waveunet": "Wave-U-Net",
    "unet": "U-Net",
    "cunet_da": "C-U-Net D-A",
    "cunet_ds_local": "C-U-Net D-S L",
    "cunet_ds_global": "C-U-Net D-S G",
}


@dataclass
class ModelConfig:
    kind: str = "cunet_ds_global"
    encoder_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256, 512])
    input_shape: list[int] = field(default_factory=lambda: [N_BINS, PATCH_FRAMES])
    source_count: int = 4
    target_part: str | None = None  # set on each of the four plain U-Net instances
    dropout: float = 0.5
    generator_hidden: int = 64
    generator_kernel: int = 10
    wave_layers: int = 12
    wave_growth: int = 24
    wave_down_kernel: int = 15
    wave_up_kernel: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        self.encoder_channels = list(self.encoder_channels)
        self.input_shape = list(self.input_shape)

    @property
    def conditioned(self) -> bool:
        return self.kind in CONDITIONED

    @property
    def pitch_conditioned(self) -> bool:
        return self.kind in PITCH_CONDITIONED


class UNet(nn.Module):
    """Mask estimator over a ``[B, 1, F, T]`` magnitude patch.

    Six stride-2 5x5 convolutions with batch norm and leaky ReLU (0.2) encode;
    the decoder mirrors them with transposed convolutions, concatenating the
    matching encoder output before each layer after the first. Dropout follows
    the first three decoder layers and a sigmoid gives the mask.
    """

    def __init__(self, channels=(16, 32, 64, 128, 256, 512), dropout: float = 0.5,
                 input_shape=(N_BINS, PATCH_FRAMES)):
        super().__init__()
        self.channels = tuple(channels)
        self.input_shape = tuple(input_shape)
        n = len(self.channels)
        self.encoder = nn.ModuleList()
        self.encoder_norm = nn.ModuleList()
        c_in = 1
        for c in self.channels:
            self.encoder.append(nn.Conv2d(c_in, c, 5, stride=2, padding=2))
            self.encoder_norm.append(nn.BatchNorm2d(c))
            c_in = c
        self.decoder = nn.ModuleList()
        self.decoder_norm = nn.ModuleList()
        for i in range(n):
            src = n - 1 - i
            c_in = self.channels[src] * (1 if i == 0 else 2)
            c_out = self.channels[src - 1] if src > 0 else 1
            self.decoder.append(nn.ConvTranspose2d(c_in, c_out, 5, stride=2, padding=2, output_padding=1))
            self.decoder_norm.append(nn.BatchNorm2d(c_out) if src > 0 else nn.Identity())
        self.dropout = nn.Dropout(dropout)
        self.n_dropout = min(3, n - 1)
        self.block_film = FiLM()

    def forward(self, x: torch.Tensor, block_params: list[FilmParams] | None = None) -> torch.Tensor:
        if tuple(x.shape[-2:]) != self.input_shape:
            raise ValueError(f"expected a {list(self.input_shape)} patch, got {list(x.shape[-2:])}")
        skips = []
        for i, (conv, norm) in enumerate(zip(self.encoder, self.encoder_norm)):
            x = norm(conv(x))
            if block_params is not None:
                x = self.block_film(x, block_params[i])
            x = F.leaky_relu(x, 0.2)
            skips.append(x)
        n = len(self.decoder)
        for i, (deconv, norm) in enumerate(zip(self.decoder, self.decoder_norm)):
            if i > 0:
                x = torch.cat([x, skips[n - 1 - i]], dim=1)
            x = deconv(x)
            if i < n - 1:
                x = F.relu(norm(x))
                if i < self.n_dropout:
                    x = self.dropout(x)
        return torch.sigmoid(x)


class ConditionedUNet(nn.Module):
    """A single U-Net steered either by a source selector (``cunet_da``) or by
    the target part's F0 control matrix (``cunet_ds_local`` / ``cunet_ds_global``).

    Pitch-conditioned kinds modulate the input patch before the first encoder
    layer; the selector kind modulates every encoder block output.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        if not config.conditioned:
            raise ValueError(f"{config.kind} is not a conditioned kind")
        self.kind = config.kind
        self.body = UNet(config.encoder_channels, config.dropout, config.input_shape)
        if config.kind == "cunet_da":
            self.generator = SourceConditionGenerator(config.encoder_channels, config.source_count)
            self.input_film = None
        else:
            variant = "global" if config.kind == "cunet_ds_global" else "local"
            self.generator = PitchConditionGenerator(
                variant,
                n_control=N_CONTROL_BINS,
                n_bins=config.input_shape[0],
                n_frames=config.input_shape[1],
                hidden=config.generator_hidden,
                kernel_size=config.generator_kernel,
            )
            self.input_film = FiLM()

    def layer_order(self) -> list[str]:
        n = len(self.body.encoder)
        if self.input_film is not None:
            return ["input_film"] + [f"body.encoder.{i}" for i in range(n)]
        order = []
        for i in range(n):
            order += [f"body.encoder.{i}", f"body.encoder_norm.{i}", "body.block_film"]
        return order

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if self.kind == "cunet_da":
            if z.ndim > 2 or z.shape[-1] != self.generator.n_sources:
                raise ValueError(f"{self.kind} needs a one-hot source selector, got shape {tuple(z.shape)}")
            return self.body(x, self.generator(z))
        if z.ndim not in (2, 3) or z.shape[-1] != N_CONTROL_BINS:
            raise ValueError(f"{self.kind} needs an F0 control matrix, got shape {tuple(z.shape)}")
        params = self.generator(z)
        return self.body(self.input_film(x, params))


class WaveUNet(nn.Module):
    """Time-domain U-Net: ``[B, 1, L]`` mixture -> ``[B, n_sources, L]`` sources.

    Each of the down blocks convolves (channels grow by ``growth``) and keeps
    every other sample; each up block doubles the length by linear
    interpolation, concatenates the matching skip and convolves back down.
    """

    def __init__(self, n_layers=12, growth=24, down_kernel=15, up_kernel=5, n_sources=4):
        super().__init__()
        self.n_layers = n_layers
        self.down = nn.ModuleList(
            nn.Conv1d(1 if i == 0 else growth * i, growth * (i + 1), down_kernel, padding=down_kernel // 2)
            for i in range(n_layers)
        )
        self.up = nn.ModuleList()
        c_prev = growth * n_layers
        for j in range(n_layers, 0, -1):
            c_out = growth * (j - 1) if j > 1 else growth
            self.up.append(nn.Conv1d(c_prev + growth * j, c_out, up_kernel, padding=up_kernel // 2))
            c_prev = c_out
        self.output = nn.Conv1d(c_prev + 1, n_sources, 1)

    @property
    def multiple(self) -> int:
        return 2**self.n_layers

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.multiple:
            raise ValueError(
                f"input length {x.shape[-1]} is not a multiple of {self.multiple}; zero-pad the window"
            )
        inp = x
        skips = []
        for conv in self.down:
            x = F.leaky_relu(conv(x), 0.2)
            skips.append(x)
            x = x[..., ::2]
        self.bottleneck_length = x.shape[-1]
        for conv, skip in zip(self.up, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="linear", align_corners=False)
            x = F.leaky_relu(conv(torch.cat([x, skip], dim=1)), 0.2)
        return self.output(torch.cat([x, inp], dim=1))


def build_model(config: ModelConfig, seed: int = 0) -> nn.Module:
    """Construct a model whose initial weights depend only on ``config`` and ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if config.kind == "unet":
            return UNet(config.encoder_channels, config.dropout, config.input_shape)
        if config.kind == "waveunet":
            return WaveUNet(config.wave_layers, config.wave_growth, config.wave_down_kernel,
                            config.wave_up_kernel, config.source_count)
        return ConditionedUNet(config)


def _as_batch(patch) -> tuple[torch.Tensor, bool]:
    x = torch.as_tensor(np.asarray(patch) if not torch.is_tensor(patch) else patch, dtype=torch.float32)
    single = x.ndim == 2
    if single:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    return x, single


def unet_forward(model: UNet, patch) -> torch.Tensor:
    """Mask for a ``[512, 128]`` (or batched) magnitude patch."""
    x, single = _as_batch(patch)
    if torch.any(x < 0):
        raise ValueError("magnitude patch must be non-negative")
    m = model(x)
    return m[0, 0] if single else m[:, 0]


def cunet_forward(model: ConditionedUNet, patch, condition, kind: str | None = None) -> torch.Tensor:
    if kind is not None and kind != model.kind:
        raise ValueError(f"model kind {model.kind} does not match requested {kind}")
    x, single = _as_batch(patch)
    z = torch.as_tensor(condition, dtype=torch.float32)
    if single and z.ndim in (1, 2) and (model.kind == "cunet_da") == (z.ndim == 1):
        z = z[None]
    m = model(x, z)
    return m[0, 0] if single else m[:, 0]


def waveunet_forward(model: WaveUNet, audio) -> torch.Tensor:
    x = torch.as_tensor(audio, dtype=torch.float32)
    single = x.ndim == 1
    if single:
        x = x[None, None]
    out = model(x)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# checkpoints: magic, format version, header length, JSON header, raw tensors

CKPT_MAGIC = b"SATBCKPT"
CKPT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    model: nn.Module
    config: ModelConfig
    step: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def checkpoint_id(self) -> str:
        h = hashlib.sha256()
        for name, t in self.model.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()[:12]


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table, blobs, offset = [], [], 0
    for name, t in ckpt.model.state_dict().items():
        arr = t.detach().cpu().numpy()
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        data = arr.tobytes(order="C")
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"config": asdict(ckpt.config), "step": ckpt.step, "seed": ckpt.seed,
         "extra": ckpt.extra, "params": table},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    magic, version, n_header = _PREFIX.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[_PREFIX.size : _PREFIX.size + n_header])
    base = _PREFIX.size + n_header
    config = ModelConfig(**header["config"])
    model = build_model(config, header["seed"])
    state = {}
    for entry in header["params"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=base + entry["offset"])
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(model, config, header["step"], header["seed"], header.get("extra", {}))
