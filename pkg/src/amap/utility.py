"""Information objectives for planning.

The coupled objective discounts the map information gain by the predicted
localization uncertainty: the entropy order parameter is tied to the pose
covariance trace, alpha = 1 + 1 / Tr(Sigma), so poor predicted localization
(alpha -> 1) removes the localization bonus while good localization
(alpha -> inf) keeps it. Three baseline objectives are provided: map
uncertainty reduction only, reduction over time (rate), and a bound-
normalized weighted linear composite.

The prior term carries the alpha -> 1 limit constant (factor e, i.e. +1 in
log space) so that the perfect-localization limit reduces exactly to the
map-only gain plus a constant; constant offsets do not affect the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "NonPositiveTraceError",
    "UtilityVariant",
    "UtilityKind",
    "PredictionBundle",
    "alpha_from_sigma",
    "renyi_entropy_trace",
    "info_gain_renyi",
    "utility_evaluate",
]

_TRACE_FLOOR = 1e-12  # caps alpha at 1 + 1e12 in the perfect-localization limit


class NonPositiveTraceError(ValueError):
    pass


class UtilityVariant(str, Enum):
    RENYI_COUPLED = "renyi_coupled"
    SHANNON_ONLY = "shannon_only"
    UNCERTAINTY_RATE = "uncertainty_rate"
    WEIGHTED_LINEAR = "weighted_linear"


@dataclass(frozen=True)
class UtilityKind:
    variant: UtilityVariant
    w_map: float = 0.5
    w_pose: float = 0.5
    map_bound: float = 1.0
    pose_bound: float = 1.0

    def __post_init__(self):
        if self.variant is UtilityVariant.WEIGHTED_LINEAR:
            if self.w_map < 0 or self.w_pose < 0:
                raise ValueError("weights must be non-negative")
            if self.map_bound <= 0 or self.pose_bound <= 0:
                raise ValueError("bounds must be positive")


@dataclass(frozen=True)
class PredictionBundle:
    """Predicted quantities for one candidate trajectory."""

    prior_trace: float  # Tr(P) before the candidate
    posterior_trace: float  # Tr(P) after predicted measurements
    pose_traces: tuple  # Tr(Sigma) along predicted measurement sites
    duration: float  # seconds

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        object.__setattr__(self, "pose_traces", tuple(self.pose_traces))


def alpha_from_sigma(pose_traces) -> float:
    """Entropy order from the mean predicted pose covariance trace."""
    traces = np.asarray(pose_traces, float)
    if traces.size == 0:
        raise ValueError("pose_traces must be non-empty")
    if np.any(traces < 0):
        raise ValueError("pose traces must be non-negative")
    agg = max(float(np.mean(traces)), _TRACE_FLOOR)
    return 1.0 + 1.0 / agg


def renyi_entropy_trace(trace_p: float, alpha: float) -> float:
    """log(Tr(P) * alpha^(1/(alpha-1))), the trace-based entropy surrogate."""
    if trace_p <= 0:
        raise NonPositiveTraceError(f"trace must be positive, got {trace_p}")
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    return float(np.log(trace_p) + np.log(alpha) / (alpha - 1.0))


def info_gain_renyi(bundle: PredictionBundle) -> float:
    """Map information gain discounted by predicted localization quality.

    The prior term is the alpha -> 1 (Shannon) limit of the entropy
    surrogate, log(Tr) + 1.
    """
    if bundle.prior_trace <= 0 or bundle.posterior_trace <= 0:
        raise NonPositiveTraceError("prior and posterior traces must be positive")
    alpha = alpha_from_sigma(bundle.pose_traces)
    prior_entropy = np.log(bundle.prior_trace) + 1.0
    return float(prior_entropy - renyi_entropy_trace(bundle.posterior_trace, alpha))


def utility_evaluate(kind: UtilityKind, bundle: PredictionBundle) -> float:
    if kind.variant is UtilityVariant.RENYI_COUPLED:
        return info_gain_renyi(bundle)
    if bundle.prior_trace <= 0 or bundle.posterior_trace <= 0:
        raise NonPositiveTraceError("prior and posterior traces must be positive")
    shannon = float(np.log(bundle.prior_trace) - np.log(bundle.posterior_trace))
    if kind.variant is UtilityVariant.SHANNON_ONLY:
        return shannon
    if kind.variant is UtilityVariant.UNCERTAINTY_RATE:
        return shannon / bundle.duration
    if kind.variant is UtilityVariant.WEIGHTED_LINEAR:
        map_red = (bundle.prior_trace - bundle.posterior_trace) / kind.map_bound
        pose_red = (kind.pose_bound - float(np.mean(bundle.pose_traces))) / kind.pose_bound
        return kind.w_map * map_red + kind.w_pose * pose_red
    raise ValueError(f"unknown utility variant {kind.variant!r}")
