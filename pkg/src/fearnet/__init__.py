"""Class-incremental learning with a dual memory and generative replay."""

from .controller import FearNet, RunResult, TrainingConfig, run_incremental
from .data import LabeledDataset, SessionSchedule, make_schedule, synthetic_gaussians
from .errors import (
    ConfigError,
    DataError,
    FearNetError,
    InputError,
    ParseError,
    StateError,
    TrainingError,
    ValidationError,
)
from .evaluation import MetricsLedger, MemoryReport, memory_report, omega_metrics

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FearNet",
    "FearNetError",
    "InputError",
    "LabeledDataset",
    "MemoryReport",
    "MetricsLedger",
    "ParseError",
    "RunResult",
    "SessionSchedule",
    "StateError",
    "TrainingConfig",
    "TrainingError",
    "ValidationError",
    "make_schedule",
    "memory_report",
    "omega_metrics",
    "run_incremental",
    "synthetic_gaussians",
]
