"""Desk-scale semantic change detection toolkit."""

from .blocks import EncoderConfig
from .metrics import ConfusionMatrix, MetricsReport, compute_report, oracle_metrics
from .networks import FAMILIES, ForwardOutput, build, mask_semantic
from .tensor import Tensor, backward, grad_check
from .train import NesterovSGD, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix", "EncoderConfig", "FAMILIES", "ForwardOutput",
    "MetricsReport", "NesterovSGD", "Tensor", "TrainConfig", "backward",
    "build", "compute_report", "evaluate", "grad_check", "mask_semantic",
    "oracle_metrics", "train", "__version__",
]
