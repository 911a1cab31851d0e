"""Quantile-based scale dynamics for one-step Value-at-Risk and Expected Shortfall."""

from qbsdrisk.errors import DomainError, EstimationError, InputError, SimulationError

__version__ = "0.1.0"

__all__ = ["DomainError", "EstimationError", "InputError", "SimulationError", "__version__"]
