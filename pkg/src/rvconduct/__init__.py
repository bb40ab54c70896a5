"""Conduct testing with BLP-style instruments: simulation, estimation and Rivers-Vuong tests."""
from .model import (
    ConductSpec,
    ConfigError,
    ConvergenceError,
    CostParams,
    DemandParams,
    Market,
    MonteCarloConfig,
    ShockParams,
    assign_firms,
    build_ownership,
    effective_index,
)

__all__ = [
    "ConductSpec",
    "ConfigError",
    "ConvergenceError",
    "CostParams",
    "DemandParams",
    "Market",
    "MonteCarloConfig",
    "ShockParams",
    "assign_firms",
    "build_ownership",
    "effective_index",
]
__version__ = "0.1.0"
