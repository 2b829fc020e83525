"""Pitch-conditioned source separation for SATB choir recordings."""

from .audio import SAMPLE_RATE, AudioClip, read_wav, write_wav
from .corpus import PARTS, VoicePart
from .nets import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .pipeline import TrainSpec, separate, train

__all__ = [
    "SAMPLE_RATE",
    "AudioClip",
    "read_wav",
    "write_wav",
    "PARTS",
    "VoicePart",
    "ModelConfig",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "TrainSpec",
    "separate",
    "train",
]

__version__ = "0.1.0"
