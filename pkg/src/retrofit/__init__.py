"""Reverse- and forward-engineering of LTI systems as optimization algorithms."""

from .classifier import classify_O, classify_S, extract_params, reverse_engineer_O, reverse_engineer_S
from .core import (
    FunctionClassParams,
    LtiSystem,
    PartitionedLtiSystem,
    QuadraticObjectiveO,
    SaddleProblem,
    Stability,
    Trajectory,
    fixed_point,
    spectrum,
    stability_verdict,
)
from .errors import RetrofitError
from .redesign import (
    RedesignSpec,
    RedesignedSystem,
    agd_redesign,
    al_redesign,
    convexification_alpha,
    hatx_redesign,
    hb_redesign,
    kappa_h_bounds,
)
from .simulator import DelayConfig, EventSchedule, consensus_metrics, error_metrics, simulate

__all__ = [
    "DelayConfig", "EventSchedule", "FunctionClassParams", "LtiSystem", "PartitionedLtiSystem",
    "QuadraticObjectiveO", "RedesignSpec", "RedesignedSystem", "RetrofitError", "SaddleProblem",
    "Stability", "Trajectory", "agd_redesign", "al_redesign", "classify_O", "classify_S",
    "consensus_metrics", "convexification_alpha", "error_metrics", "extract_params", "fixed_point",
    "hatx_redesign", "hb_redesign", "kappa_h_bounds", "reverse_engineer_O", "reverse_engineer_S",
    "simulate", "spectrum", "stability_verdict",
]
