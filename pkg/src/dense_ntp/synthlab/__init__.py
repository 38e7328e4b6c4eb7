"""Synthetic scenes, a tiny token-logit model, training and ablation presets."""

from .experiments import LabConfig, PRESETS, UnknownPreset, lab_vocabulary, run_experiment
from .model import ShapeError, TinyModel, backward, forward
from .scenes import DegenerateScene, SyntheticScene, boundary_fraction, generate_scene, pool_features
from .train import Diverged, GradcheckReport, evaluate_miou, gradcheck, prepare, train

__all__ = [
    "DegenerateScene",
    "Diverged",
    "GradcheckReport",
    "LabConfig",
    "PRESETS",
    "ShapeError",
    "SyntheticScene",
    "TinyModel",
    "UnknownPreset",
    "backward",
    "boundary_fraction",
    "evaluate_miou",
    "forward",
    "generate_scene",
    "gradcheck",
    "lab_vocabulary",
    "pool_features",
    "prepare",
    "run_experiment",
    "train",
]
