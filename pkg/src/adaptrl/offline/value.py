"""Off-policy value of a regime: IPTW, AIPTW, plug-in, and MSM weights."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core import Dataset, Regime, Trajectory, as_generator
from ..errors import (
    MissingReward,
    NoMatchedTrajectories,
    PositivityViolation,
    PropensityOutOfRange,
    ValidationError,
)
from .models import OutcomeModel, PropensityModel

DEFAULT_BOOTSTRAP = 200
LOW_ESS = 0.01


class DegenerateWeightsWarning(UserWarning):
    """Importance weights concentrate on very few trajectories."""


@dataclass(frozen=True)
class ValueEstimate:
    point: float
    std_error: float
    effective_sample_fraction: float = 1.0
    n_boot: int = 0
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "point": self.point, "std_error": self.std_error,
            "effective_sample_fraction": self.effective_sample_fraction,
            "n_boot": self.n_boot, "seed": self.seed, "metadata": self.metadata,
        }


def _bootstrap_ratio(num: np.ndarray, den: np.ndarray, n_boot: int, seed: int) -> float:
    """Bootstrap SD of ``sum(num) / sum(den)`` over trajectory resamples."""
    if n_boot < 2:
        return float("nan")
    g = as_generator(seed)
    n = num.size
    out = np.empty(n_boot)
    chunk = max(1, 2_000_000 // max(n, 1))
    for s in range(0, n_boot, chunk):
        m = min(chunk, n_boot - s)
        idx = g.integers(0, n, size=(m, n))
        d = den[idx].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[s : s + m] = np.where(d > 0, num[idx].sum(axis=1) / np.where(d > 0, d, 1.0), np.nan)
    return float(np.nanstd(out, ddof=1))


def _taken_regime_probs(data: Dataset, regime: Regime) -> np.ndarray:
    """``d_t(A_t | H_t)`` for every row."""
    out = np.empty(data.n_rows)
    if data.horizon is None or regime.stationary:
        P = regime.probs(0, data.states)
        return P[np.arange(data.n_rows), data.actions]
    for t in range(data.horizon + 1):
        P = regime.probs(t, data.histories(t))
        a = data.stage(t).actions
        out[t :: data.horizon + 1] = P[np.arange(a.size), a]
    return out


def _behavior_probs(data: Dataset, behavior_probs, propensity_model) -> tuple[np.ndarray, bool]:
    if behavior_probs is not None:
        pb = np.asarray(behavior_probs, dtype=float).reshape(-1)
        if pb.shape[0] != data.n_rows:
            raise ValidationError("behavior_probs needs one entry per row")
        return pb, False
    pb = data.behavior_prob.copy()
    if not np.any(np.isnan(pb)):
        return pb, False
    if data.horizon is None:
        raise ValidationError("propensity estimation needs a finite-horizon dataset")
    pm = propensity_model or PropensityModel("logistic")
    for t in range(data.horizon + 1):
        b = data.stage(t)
        H = data.histories(t)
        fp = pm.fit(H, b.actions, data.actions_at(t), data.state_dim, t)
        pb[t :: data.horizon + 1] = fp.prob_of(H, b.actions)
    return pb, True


def value_iptw(
    data: Dataset,
    regime: Regime,
    behavior_probs: np.ndarray | None = None,
    gamma: float = 1.0,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    propensity_model: PropensityModel | None = None,
) -> ValueEstimate:
    """Self-normalized IPTW value ``sum(w R) / sum(w)``.

    ``w = prod_t d_t(A_t | H_t) / pi_t`` (the concordance indicator for
    deterministic regimes). Behaviour probabilities come from
    ``behavior_probs``, else the data, else a fitted propensity model (flagged
    in ``metadata``).
    """
    if np.any(np.isnan(data.rewards)):
        raise MissingReward("missing rewards: impute or drop before value estimation")
    pb, estimated = _behavior_probs(data, behavior_probs, propensity_model)
    dprob = _taken_regime_probs(data, regime)
    matched_row = dprob > 0
    if np.any(matched_row & ~(pb > 0)):
        raise PositivityViolation("behaviour probability is zero where the regime puts mass")
    ratio = np.where(matched_row, dprob / np.where(pb > 0, pb, 1.0), 0.0)
    w = np.multiply.reduceat(ratio, data.offsets[:-1])
    if w.sum() <= 0:
        raise NoMatchedTrajectories("no trajectory is concordant with the regime")
    R = data.returns(gamma)
    point = float(np.sum(w * R) / np.sum(w))
    ess = float(np.sum(w) ** 2 / (w.size * np.sum(w**2)))
    meta = {"estimator": "iptw", "estimated_propensity": estimated, "n_matched": int(np.sum(w > 0))}
    if ess < LOW_ESS:
        meta["warning"] = "low effective sample fraction"
        warnings.warn(f"effective sample fraction {ess:.4f} below {LOW_ESS}", DegenerateWeightsWarning, stacklevel=2)
    se = _bootstrap_ratio(w * R, w, n_boot, seed)
    return ValueEstimate(point, se, ess, n_boot, seed, meta)


def _single_stage(data: Dataset) -> None:
    if data.horizon != 0:
        raise ValidationError("this estimator is defined for single-stage data")
    if np.any(np.isnan(data.rewards)):
        raise MissingReward("missing rewards: impute or drop before value estimation")


def value_aiptw(
    data: Dataset,
    regime: Regime,
    propensity_model: PropensityModel,
    outcome_model: OutcomeModel,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> ValueEstimate:
    """Augmented IPTW for a single-stage binary decision.

    Per subject ``I Y / pi_d - (I - pi_d) / pi_d * mu_d`` with ``I = 1{A = d(H)}``,
    ``pi_d`` the fitted probability of the regime's action and ``mu_d`` the
    fitted mean outcome under it. The standard error bootstraps subjects with
    the working models held fixed.
    """
    _single_stage(data)
    p, K = data.state_dim, data.actions_at(0)
    H = data.histories(0)
    b = data.stage(0)
    fp = propensity_model.fit(H, b.actions, K, p, 0, recorded=b.behavior_prob)
    fo = outcome_model.fit(H, b.actions, b.rewards, K, p, 0)
    d = regime.actions(0, H)
    pi_d = fp.probs(H)[np.arange(d.size), d]
    if np.any(~np.isfinite(pi_d)) or np.any(pi_d <= 0.0) or np.any(pi_d > 1.0):
        raise PropensityOutOfRange("fitted propensity of the regime's action outside (0, 1]")
    mu_d = fo.predict(H, d)
    ind = (b.actions == d).astype(float)
    contrib = ind * b.rewards / pi_d - (ind - pi_d) / pi_d * mu_d
    w = ind / pi_d
    ess = float(w.sum() ** 2 / (w.size * np.sum(w**2))) if w.sum() > 0 else 0.0
    se = _bootstrap_ratio(contrib, np.ones_like(contrib), n_boot, seed)
    meta = {"estimator": "aiptw", "propensity": propensity_model.kind}
    return ValueEstimate(float(contrib.mean()), se, ess, n_boot, seed, meta)


def value_plugin(data: Dataset, regime: Regime, outcome_model: OutcomeModel, n_boot: int = 0, seed: int = 0) -> ValueEstimate:
    """Outcome-regression estimate ``mean mu(H, d(H))`` (single stage)."""
    _single_stage(data)
    p, K = data.state_dim, data.actions_at(0)
    H = data.histories(0)
    b = data.stage(0)
    fo = outcome_model.fit(H, b.actions, b.rewards, K, p, 0)
    mu = fo.predict(H, regime.actions(0, H))
    se = _bootstrap_ratio(mu, np.ones_like(mu), n_boot, seed) if n_boot else float(np.std(mu, ddof=1) / np.sqrt(mu.size))
    return ValueEstimate(float(mu.mean()), se, 1.0, n_boot, seed, {"estimator": "plugin"})


def msm_weights(traj: Trajectory | Dataset, behavior_probs: np.ndarray | None = None) -> np.ndarray:
    """Cumulative inverse-probability weights ``w_t = 1 / prod_{s<=t} pi_s``.

    For a :class:`Dataset` the weights are returned per row (cumulated within
    each trajectory).
    """
    if isinstance(traj, Trajectory):
        pb = np.array([np.nan if s.behavior_prob is None else s.behavior_prob for s in traj.stages])
        groups = np.zeros(pb.size, dtype=np.int64)
    else:
        pb = traj.behavior_prob.copy()
        groups = traj.traj_index
    if behavior_probs is not None:
        pb = np.asarray(behavior_probs, dtype=float).reshape(-1)
    if np.any(np.isnan(pb)) or np.any(pb <= 0.0) or np.any(pb > 1.0):
        raise PositivityViolation("MSM weights need behaviour probabilities in (0, 1] on every stage")
    out = np.empty(pb.size)
    starts = np.r_[0, np.flatnonzero(np.diff(groups)) + 1, pb.size]
    for a, b in zip(starts[:-1], starts[1:]):
        out[a:b] = 1.0 / np.cumprod(pb[a:b])
    return out
