"""
InAViT - An interaction-centric video transformer for egocentric next-action anticipation.

This package provides a small numpy tensor engine with reverse-mode gradients, the
hand-object interaction modelling and trajectory-attention model built on it, a
synthetic anticipation task, and a harness for training, evaluation, gradient
checks, ablations and attention export.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import InavitError
from .metrics import MetricsReport, mean_top5_recall
from .model import InAViTConfig, InAViTModel, InAViTParams, forward
from .runner import AnticipationRunner
from .synthdata import SynthConfig, generate_dataset
from .tokenizer import TokenizerConfig

__version__ = "0.1.0"

__all__ = [
    "AnticipationRunner",
    "Checkpoint",
    "InAViTConfig",
    "InAViTModel",
    "InAViTParams",
    "InavitError",
    "MetricsReport",
    "RunConfig",
    "SynthConfig",
    "TokenizerConfig",
    "forward",
    "generate_dataset",
    "load_checkpoint",
    "load_config",
    "mean_top5_recall",
    "save_checkpoint",
]
