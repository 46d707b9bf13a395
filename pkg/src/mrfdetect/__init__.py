"""Quickest detection of the correlation structure of Gaussian Markov networks."""

from .engine import DetectionConfig, TrialResult, compare_sprt_variant, llr_update, run_trial
from .errors import (
    ConfigError,
    DetectionError,
    InvalidCorrelationError,
    InvalidInputError,
    InvalidStateError,
    PreconditionError,
    SingularityError,
)
from .experiments import RunStats, Scenario, monte_carlo
from .feasibility import FeasibilityReport, feasibility_lower_bound, gaussian_eigen_bound
from .gmrf import GaussianModel, HypothesisPair, independence_pair
from .graph import Graph
from .measures import MeasureContext
from .policies import POLICIES, Hypothesis, SelectionContext, get_policy, ml_decision

__all__ = [
    "ConfigError", "DetectionConfig", "DetectionError", "FeasibilityReport", "GaussianModel",
    "Graph", "Hypothesis", "HypothesisPair", "InvalidCorrelationError", "InvalidInputError",
    "InvalidStateError", "MeasureContext", "POLICIES", "PreconditionError", "RunStats",
    "Scenario", "SelectionContext", "SingularityError", "TrialResult", "compare_sprt_variant",
    "feasibility_lower_bound", "gaussian_eigen_bound", "get_policy", "independence_pair",
    "llr_update", "ml_decision", "monte_carlo", "run_trial",
]
