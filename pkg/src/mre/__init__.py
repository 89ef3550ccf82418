"""Multimodal relevance estimation for multimodal emotion classification."""

from .data import InstanceBag, SynthConfig, load_dataset, save_dataset, split_and_batch, synth_generate
from .estimator import MREClassifier
from .harness import (RunReport, TrainConfig, ablation_run, evaluate, load_checkpoint, relevance_report,
                      save_checkpoint, train)
from .model import ModelConfig, MRENetwork

__version__ = "0.1.0"

__all__ = [
    "InstanceBag", "SynthConfig", "load_dataset", "save_dataset", "split_and_batch", "synth_generate",
    "MREClassifier", "RunReport", "TrainConfig", "ablation_run", "evaluate", "load_checkpoint",
    "relevance_report", "save_checkpoint", "train", "ModelConfig", "MRENetwork",
]
