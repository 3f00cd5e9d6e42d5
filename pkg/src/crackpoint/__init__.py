"""Crackpoint: synthetic cracked-plate wave fields and keypoint-box localization."""

from .labels import KeypointBox, keypoints_to_mask, mask_to_keypoints
from .metrics import EvalReport, binned_report, integrity, iou, purity
from .model import Model, ModelConfig, build_model, predict_box, raw_to_box
from .train import TrainConfig, evaluate, train
from .wavesim import (
    CrackSampler,
    CrackSpec,
    LatticeConfig,
    SourceSpec,
    WaveSample,
    build_lattice,
    simulate,
)

__all__ = [
    "KeypointBox", "keypoints_to_mask", "mask_to_keypoints",
    "EvalReport", "binned_report", "integrity", "iou", "purity",
    "Model", "ModelConfig", "build_model", "predict_box", "raw_to_box",
    "TrainConfig", "evaluate", "train",
    "CrackSampler", "CrackSpec", "LatticeConfig", "SourceSpec", "WaveSample",
    "build_lattice", "simulate",
]

__version__ = "0.1.0"
