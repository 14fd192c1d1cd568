"""Adaptive-intervention estimation toolkit.

Finite-horizon regime estimation (Q-learning, G-estimation, outcome weighted
learning), off-policy value estimation, indefinite-horizon methods (GGQ,
V-learning), contextual-bandit agents, simulators and an experiment harness.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Dataset,
    DecisionRule,
    FeatureMap,
    MarkovFeature,
    Regime,
    RngSpec,
    StageRecord,
    Trajectory,
    dataset_from_csv,
    dataset_to_csv,
    discounted_return,
)
from .errors import AdaptRLError, ConfigInvalid, ValidationError  # noqa: E402

__all__ = [
    "AdaptRLError", "ConfigInvalid", "Dataset", "DecisionRule", "FeatureMap", "MarkovFeature", "Regime",
    "RngSpec", "StageRecord", "Trajectory", "ValidationError", "__version__", "dataset_from_csv",
    "dataset_to_csv", "discounted_return",
]
