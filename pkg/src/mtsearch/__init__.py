"""Non-adaptive noisy search for multiple moving targets."""

from __future__ import annotations

__version__ = "0.1.0"

from .channel import QueryChannel, SizeFunction
from .errors import (
    ConfigurationError,
    DomainError,
    NumericalError,
    ResourceError,
    SchemaError,
    SearchError,
)
from .trajectory import TargetState, TrajectoryGrid, enumerate_trajectories

__all__ = [
    "ConfigurationError",
    "DomainError",
    "NumericalError",
    "QueryChannel",
    "ResourceError",
    "SchemaError",
    "SearchError",
    "SizeFunction",
    "TargetState",
    "TrajectoryGrid",
    "enumerate_trajectories",
    "__version__",
]
