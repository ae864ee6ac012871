"""Image-guided depth completion at desk scale.

Repetitive hourglass feature extraction, channel-attention guidance
units with an exact activation-memory model, adaptive multi-branch
fusion, masked regression training, and a small numpy autodiff core
underneath it all.
"""

from .tensor import Tensor
from .hourglass import HourglassConfig, HourglassState, HourglassStack, HourglassUnit
from .guidance import (
    AdaptiveFusion,
    DynamicGuidance,
    EfficientGuidance,
    FactorizedGuidance,
    RepetitiveGuidance,
)
from .model import CompletionNet, ModelConfig, build, desk_default_config, masked_mse
from .trainer import TrainConfig, adam_step, run_ablation, train
from .metrics import MetricReport, evaluate
from .data import DatasetSpec, Sample, gen_scene, read_dmap, sparsify, write_dmap
from .memcost import MemCostReport, cost, sweep

__all__ = [
    "Tensor",
    "HourglassConfig",
    "HourglassState",
    "HourglassStack",
    "HourglassUnit",
    "AdaptiveFusion",
    "DynamicGuidance",
    "EfficientGuidance",
    "FactorizedGuidance",
    "RepetitiveGuidance",
    "CompletionNet",
    "ModelConfig",
    "build",
    "desk_default_config",
    "masked_mse",
    "TrainConfig",
    "adam_step",
    "run_ablation",
    "train",
    "MetricReport",
    "evaluate",
    "DatasetSpec",
    "Sample",
    "gen_scene",
    "read_dmap",
    "sparsify",
    "write_dmap",
    "MemCostReport",
    "cost",
    "sweep",
]
