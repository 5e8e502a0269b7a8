"""Robust downlink beamforming toolkit.

Closed-form fractional-programming and WMMSE solvers for weighted sum rate,
plus an unfolded projected-gradient network whose per-step sizes are trained
against a quantile objective over sampled channel errors.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, SolverError, TrainingError
from .model_core import (
    AuxiliaryState,
    ObjectiveMode,
    SystemConfig,
    project_power,
    qt_objective,
    sinr,
    total_power,
    wsr,
)

__all__ = [
    "AuxiliaryState",
    "ConfigurationError",
    "ObjectiveMode",
    "SolverError",
    "SystemConfig",
    "TrainingError",
    "project_power",
    "qt_objective",
    "sinr",
    "total_power",
    "wsr",
    "__version__",
]
