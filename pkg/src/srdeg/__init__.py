"""Degradation study toolkit for CNN single-image super-resolution."""

from .degrade import DegradationSpec, degrade
from .metrics import MetricReport, evaluate_all
from .models import build_fsrcnn, build_model, build_srresnet
from .train import TrainConfig, train

__all__ = [
    "DegradationSpec",
    "MetricReport",
    "TrainConfig",
    "build_fsrcnn",
    "build_model",
    "build_srresnet",
    "degrade",
    "evaluate_all",
    "train",
]

__version__ = "0.1.0"
