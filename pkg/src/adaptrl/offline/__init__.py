"""Finite-horizon regime estimation and off-policy value estimation."""
from .gestimation import ContrastModel, GEstimationResult, g_estimation_fit
from .models import FittedOutcome, FittedPropensity, OutcomeModel, PropensityModel
from .owl import BowlResult, OwlResult, bowl_fit, owl_fit, weighted_hinge_solve
from .qlearning import QLearningResult, QModel, q_learning_fit, soft_threshold_regime, tabular_q_update
from .value import (
    DegenerateWeightsWarning,
    ValueEstimate,
    msm_weights,
    value_aiptw,
    value_iptw,
    value_plugin,
)

__all__ = [
    "BowlResult", "ContrastModel", "DegenerateWeightsWarning", "FittedOutcome", "FittedPropensity",
    "GEstimationResult", "OutcomeModel", "OwlResult", "PropensityModel", "QLearningResult", "QModel",
    "ValueEstimate", "bowl_fit", "g_estimation_fit", "msm_weights", "owl_fit", "q_learning_fit",
    "soft_threshold_regime", "tabular_q_update", "value_aiptw", "value_iptw", "value_plugin",
    "weighted_hinge_solve",
]
