"""Feature-wise affine modulation and the networks that produce its parameters."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .dsp import N_BINS, PATCH_FRAMES
from .pitch import N_CONTROL_BINS


class Granularity(str, enum.Enum):
    PER_ENCODER_BLOCK_CHANNEL = "per_encoder_block_channel"
    PER_BIN_PER_FRAME = "per_bin_per_frame"
    PER_FRAME = "per_frame"


@dataclass
class FilmParams:
    gamma: torch.Tensor
    beta: torch.Tensor
    granularity: Granularity

    def __post_init__(self):
        if tuple(self.gamma.shape) != tuple(self.beta.shape):
            raise ValueError(f"gamma {tuple(self.gamma.shape)} and beta {tuple(self.beta.shape)} differ")
        self.granularity = Granularity(self.granularity)

    @classmethod
    def identity(cls, shape, granularity, dtype=torch.float32) -> "FilmParams":
        return cls(torch.ones(shape, dtype=dtype), torch.zeros(shape, dtype=dtype), granularity)


def _align(p: torch.Tensor, x: torch.Tensor, granularity: Granularity) -> torch.Tensor:
    if granularity is Granularity.PER_ENCODER_BLOCK_CHANNEL:
        # [..., C] -> [..., C, 1, 1] over a [..., C, H, W] feature map
        return p[..., None, None]
    # [..., F or 1, T] over [..., 1, F, T]: add the channel axis when x has one
    if x.ndim == p.ndim + 1:
        return p.unsqueeze(-3)
    return p


def film_apply(x: torch.Tensor, params: FilmParams) -> torch.Tensor:
    """``gamma * x + beta`` broadcast according to ``params.granularity``."""
    gamma = _align(params.gamma, x, params.granularity)
    beta = _align(params.beta, x, params.granularity)
    try:
        shape = torch.broadcast_shapes(gamma.shape, x.shape)
    except RuntimeError as exc:
        raise ValueError(f"FiLM params {tuple(params.gamma.shape)} do not broadcast over {tuple(x.shape)}") from exc
    if tuple(shape) != tuple(x.shape):
        raise ValueError(f"FiLM params {tuple(params.gamma.shape)} would change feature shape {tuple(x.shape)}")
    return gamma * x + beta


class FiLM(nn.Module):
    """Parameter-free module wrapper so FiLM shows up in the module graph."""

    def forward(self, x: torch.Tensor, params: FilmParams) -> torch.Tensor:
        return film_apply(x, params)


def _identity_head(layer: nn.Linear, n_out: int) -> None:
    # emit gamma = 1, beta = 0 until trained
    nn.init.zeros_(layer.weight)
    with torch.no_grad():
        layer.bias.zero_()
        layer.bias[:n_out] = 1.0


class SourceConditionGenerator(nn.Module):
    """One-hot source selector -> per-channel (gamma, beta) for each encoder block."""

    def __init__(self, channels=(16, 32, 64, 128, 256, 512), n_sources: int = 4, hidden: int = 32):
        super().__init__()
        self.channels = tuple(channels)
        self.n_sources = n_sources
        self.embed = nn.Linear(n_sources, hidden)
        self.heads = nn.ModuleList(nn.Linear(hidden, 2 * c) for c in self.channels)
        self.reset_identity()

    def reset_identity(self) -> None:
        for head, c in zip(self.heads, self.channels):
            _identity_head(head, c)

    def forward(self, z: torch.Tensor) -> list[FilmParams]:
        if z.ndim == 1:
            z = z.unsqueeze(0)
        if z.shape[-1] != self.n_sources or not _is_one_hot(z):
            raise ValueError(f"expected one-hot source selectors of length {self.n_sources}")
        h = F.relu(self.embed(z))
        out = []
        for head, c in zip(self.heads, self.channels):
            gb = head(h)
            out.append(FilmParams(gb[:, :c], gb[:, c:], Granularity.PER_ENCODER_BLOCK_CHANNEL))
        return out


def _is_one_hot(z: torch.Tensor) -> bool:
    return bool(torch.all((z == 0) | (z == 1)) and torch.all(z.sum(-1) == 1))


class PitchConditionGenerator(nn.Module):
    """One-hot F0 control matrix ``[T, 360]`` -> FiLM parameters for the input spectrogram.

    The control matrix is read as a length-``T`` sequence with 360 channels. A
    kernel-10 convolution over time (zero padding 4 before / 5 after, so ``T`` is
    preserved) mixes neighbouring frames, then a per-frame dense layer emits
    either one (gamma, beta) per frequency bin (``"global"``, ``[n_bins, T]``) or
    one per frame (``"local"``, ``[1, T]``).
    """

    def __init__(
        self,
        variant: str = "global",
        n_control: int = N_CONTROL_BINS,
        n_bins: int = N_BINS,
        n_frames: int = PATCH_FRAMES,
        hidden: int = 64,
        kernel_size: int = 10,
    ):
        super().__init__()
        if variant not in ("global", "local"):
            raise ValueError(f"variant must be 'global' or 'local', got {variant!r}")
        self.variant = variant
        self.n_control = n_control
        self.n_frames = n_frames
        self.n_out = n_bins if variant == "global" else 1
        self.kernel_size = kernel_size
        self.conv = nn.Conv1d(n_control, hidden, kernel_size)
        self.dense = nn.Linear(hidden, 2 * self.n_out)
        self.reset_identity()

    def reset_identity(self) -> None:
        _identity_head(self.dense, self.n_out)

    @property
    def granularity(self) -> Granularity:
        return Granularity.PER_BIN_PER_FRAME if self.variant == "global" else Granularity.PER_FRAME

    def forward(self, z: torch.Tensor) -> FilmParams:
        if z.ndim == 2:
            z = z.unsqueeze(0)
        if z.ndim != 3 or tuple(z.shape[1:]) != (self.n_frames, self.n_control):
            raise ValueError(f"expected control matrix [{self.n_frames}, {self.n_control}], got {tuple(z.shape)}")
        left = (self.kernel_size - 1) // 2
        h = F.pad(z.transpose(1, 2), (left, self.kernel_size - 1 - left))
        h = F.relu(self.conv(h))  # [B, hidden, T]
        gb = self.dense(h.transpose(1, 2))  # [B, T, 2 * n_out]
        gamma = gb[..., : self.n_out].transpose(1, 2)
        beta = gb[..., self.n_out :].transpose(1, 2)
        return FilmParams(gamma, beta, self.granularity)


def condition_generator_da(generator: SourceConditionGenerator, z) -> list[FilmParams]:
    return generator(torch.as_tensor(z, dtype=generator.embed.weight.dtype))


def condition_generator_ds(generator: PitchConditionGenerator, z) -> FilmParams:
    return generator(torch.as_tensor(z, dtype=generator.dense.weight.dtype))
