"""Unified multimodal punctuation restoration for mixed audio / audio-free text."""

from .bootstrapper import Label
from .encoder import Vocabulary, build_vocabulary, tokenize
from .model import ModelConfig, UniPunc
from .train import TrainConfig, Trainer, train

__all__ = ["Label", "ModelConfig", "TrainConfig", "Trainer", "UniPunc", "Vocabulary",
           "build_vocabulary", "tokenize", "train"]
__version__ = "0.1.0"
