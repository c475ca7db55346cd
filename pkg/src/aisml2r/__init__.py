"""Multilevel Richardson-Romberg Monte Carlo with adaptive importance sampling."""

__version__ = "0.1.0"

from .calibration import LevelPlan, StructuralParams, WeightSet, plan, solve_weights
from .estimators import EstimateResult, run_aisml2r, run_crude_mc, run_ml2r
from .path_kernel import Scheme, SdeModel, gbm
from .payoffs import PayoffSpec, reference_price

__all__ = [
    "LevelPlan",
    "StructuralParams",
    "WeightSet",
    "plan",
    "solve_weights",
    "EstimateResult",
    "run_aisml2r",
    "run_crude_mc",
    "run_ml2r",
    "Scheme",
    "SdeModel",
    "gbm",
    "PayoffSpec",
    "reference_price",
]
