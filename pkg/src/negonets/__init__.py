"""Seller and buyer networks trained in a minimax pricing game.

Submodules: ``neural`` (MLP engine), ``losses``, ``training``,
``simulator``, ``baseline``, ``metrics``, ``data``, ``experiment`` and ``cli``.
"""

__version__ = "0.1.0"

from .data import Dataset, load_csv, save_csv, split
from .losses import LossConfig
from .metrics import EvalRecords, MetricsReport, evaluate
from .neural import ConfigurationError, Mlp, ShapeError, TrainingError, mlp_init
from .training import TrainConfig, train_negonets

__all__ = [
    "ConfigurationError",
    "Dataset",
    "EvalRecords",
    "LossConfig",
    "MetricsReport",
    "Mlp",
    "ShapeError",
    "TrainConfig",
    "TrainingError",
    "evaluate",
    "load_csv",
    "mlp_init",
    "save_csv",
    "split",
    "train_negonets",
]
