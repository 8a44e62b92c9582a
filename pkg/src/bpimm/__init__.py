"""Two-type branching processes with immigration.

Exact generating-function oracles, seeded Monte Carlo, and decay-rate
verdicts for the tail behaviour of supercritical two-type branching
processes with immigration.
"""

from .model import Pmf2, ModelSpec, HypothesisReport, load_model, validate
from .spectral import SpectralData, perron, gamma_p0, mean_ratio_sup, analyze

__all__ = [
    "Pmf2",
    "ModelSpec",
    "HypothesisReport",
    "load_model",
    "validate",
    "SpectralData",
    "perron",
    "gamma_p0",
    "mean_ratio_sup",
    "analyze",
]
