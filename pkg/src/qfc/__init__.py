"""Simulation of continuous-measurement quantum feedback control.

Submodules
----------
core
    Density matrices, eigendecomposition, target-state algebra.
sme
    Reference integrator of the stochastic master equation.
eigenflow
    Exact eigenvalue and eigenvector flow.
goodcontrol
    First-order dynamics near a pure target.
qubit
    Single-qubit unbiased-measurement feedback protocol.
harness, cli
    Ensembles, validation, sweeps and the ``qfc`` command.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AllRatesZero,
    ConfigError,
    DegenerateSpectrum,
    DimensionMismatch,
    InvalidState,
    ParseError,
    PositivityLoss,
    QFCError,
    RegimeBreakdown,
    TrajectoryFailure,
    ValidationError,
    ZeroDamping,
)
from .config import SimConfig, parse_config  # noqa: E402
from .stats import EnsembleStats  # noqa: E402

__all__ = [
    "AllRatesZero",
    "ConfigError",
    "DegenerateSpectrum",
    "DimensionMismatch",
    "EnsembleStats",
    "InvalidState",
    "ParseError",
    "PositivityLoss",
    "QFCError",
    "RegimeBreakdown",
    "SimConfig",
    "TrajectoryFailure",
    "ValidationError",
    "ZeroDamping",
    "__version__",
    "parse_config",
]
