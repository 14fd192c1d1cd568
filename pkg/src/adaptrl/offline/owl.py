"""Outcome weighted learning (single stage) and its backward multistage extension."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import Dataset, DecisionRule, FeatureMap, Regime, signed_code
from ..errors import EmptyStageSample, MissingReward, NegativeReward, NotBinaryAction, PositivityViolation, ValidationError

DEGENERATE_NORM = 1e-3


@dataclass(frozen=True)
class OwlResult:
    """Linear decision function ``f(H) = coef' H_1`` and its sign rule."""

    coef: np.ndarray
    fmap: FeatureMap
    objective: float
    degenerate: bool
    n_iter: int
    n_used: int
    rule: DecisionRule

    def decision_function(self, H: np.ndarray, p: int, t: int) -> np.ndarray:
        return self.fmap.summarize(H, p, t)[1] @ self.coef


def owl_objective(w: np.ndarray, X: np.ndarray, s: np.ndarray, weights: np.ndarray, lam: float) -> float:
    margin = s * (X @ w)
    return float(np.mean(weights * np.maximum(1.0 - margin, 0.0)) + lam * w @ w)


def weighted_hinge_solve(
    X: np.ndarray, s: np.ndarray, weights: np.ndarray, lam: float, max_iters: int = 2000
) -> tuple[np.ndarray, float, int]:
    """Minimize ``mean(W * max(1 - s X w, 0)) + lam ||w||^2``.

    Projected subgradient from ``w = 0`` with step ``R / (G sqrt(k))`` onto the
    ball of radius ``R = sqrt(mean(W) / lam)``, which contains the minimizer.
    Returns the best iterate, its objective and the iteration count.
    """
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    n, d = X.shape
    wbar = float(np.mean(weights))
    R = np.sqrt(wbar / lam) if wbar > 0 else 0.0
    G = float(np.mean(weights * np.linalg.norm(X, axis=1))) + 2.0 * lam * R
    w = np.zeros(d)
    best_w, best = w.copy(), owl_objective(w, X, s, weights, lam)
    if G <= 0 or R <= 0:
        return best_w, best, 0
    ws = weights * s
    for k in range(1, max_iters + 1):
        active = s * (X @ w) < 1.0
        g = -(ws * active) @ X / n + 2.0 * lam * w
        w = w - (R / (G * np.sqrt(k))) * g
        nrm = np.linalg.norm(w)
        if nrm > R:
            w *= R / nrm
        obj = owl_objective(w, X, s, weights, lam)
        if obj < best:
            best, best_w = obj, w.copy()
    return best_w, best, max_iters


def _stage_inputs(data: Dataset, t: int, fmap: FeatureMap):
    H = data.histories(t)
    _, X = fmap.summarize(H, data.state_dim, t)
    return H, X


def _check_binary(data: Dataset) -> None:
    if any(k != 2 for k in data.n_actions):
        raise NotBinaryAction("outcome weighted learning needs binary actions")


def _check_outcomes(y: np.ndarray) -> None:
    if np.any(np.isnan(y)):
        raise MissingReward("missing rewards: impute or drop first")
    if np.any(y < 0):
        raise NegativeReward("outcome weighted learning requires non-negative rewards")


def _rule_from(coef: np.ndarray, fmap: FeatureMap, p: int, t: int) -> DecisionRule:
    d0, _ = fmap.dims(p, t)
    return DecisionRule("deterministic", np.r_[np.zeros(d0), coef], fmap, 2)


def _fit_weighted(data, t, fmap, weights, lam, max_iters) -> OwlResult:
    _, X = _stage_inputs(data, t, fmap)
    s = signed_code(data.stage(t).actions).astype(float)
    keep = weights > 0
    if not np.any(keep):
        raise EmptyStageSample(f"stage {t}: every outcome weight is zero")
    coef, obj, n_iter = weighted_hinge_solve(X[keep], s[keep], weights[keep], lam, max_iters)
    return OwlResult(coef, fmap, obj, bool(np.linalg.norm(coef) <= DEGENERATE_NORM), n_iter, int(keep.sum()),
                     _rule_from(coef, fmap, data.state_dim, t))


def _default_map() -> FeatureMap:
    return FeatureMap("linear_interaction", main_columns=(), tailoring_columns=None)


def _probs(data: Dataset) -> np.ndarray:
    pb = data.behavior_prob
    if np.any(np.isnan(pb)) or np.any(pb <= 0):
        raise PositivityViolation("outcome weighted learning needs recorded behaviour probabilities > 0")
    return pb


def owl_fit(data: Dataset, lam: float = 0.01, max_iters: int = 2000, fmap: FeatureMap | None = None) -> tuple[OwlResult, Regime]:
    """Single-stage OWL with a linear decision function.

    Minimizes ``mean((Y / pi) * hinge(A f(H))) + lam ||f||^2`` with actions
    coded +-1 (index 1 is +1).
    """
    if data.horizon != 0:
        raise ValidationError("owl_fit takes single-stage data; use bowl_fit for several stages")
    res, regime, _ = _bowl(data, [lam], max_iters, [fmap or _default_map()])
    return res[0], regime


@dataclass(frozen=True)
class BowlResult:
    stages: tuple[OwlResult, ...]
    regime: Regime
    weights: tuple[np.ndarray, ...] = field(repr=False)

    def support(self, t: int) -> np.ndarray:
        """Trajectories that enter the stage-``t`` fit (positive weight)."""
        return self.weights[t] > 0


def _bowl(data, lams, max_iters, maps):
    _check_binary(data)
    T = data.horizon
    y = data.returns(1.0) if not np.any(np.isnan(data.rewards)) else np.full(data.n_trajectories, np.nan)
    _check_outcomes(y)
    pb = _probs(data)
    probs = [pb[t :: T + 1] for t in range(T + 1)]
    out: list = [None] * (T + 1)
    weights: list = [None] * (T + 1)
    concordant = np.ones(data.n_trajectories)
    denom = np.ones(data.n_trajectories)
    p = data.state_dim
    for t in range(T, -1, -1):
        denom = denom * probs[t]
        weights[t] = y * concordant / denom
        out[t] = _fit_weighted(data, t, maps[t], weights[t], lams[t], max_iters)
        d = (out[t].decision_function(data.histories(t), p, t) > 0).astype(np.int64)
        concordant = concordant * (data.stage(t).actions == d)
    rules = tuple(r.rule for r in out)
    hp = {"lambdas": list(lams), "max_iters": max_iters}
    regime = Regime(rules, p, provenance={"method": "owl" if T == 0 else "bowl", "hyperparams": hp})
    return out, regime, weights


def bowl_fit(
    data: Dataset,
    lambdas: float | Sequence[float] = 0.01,
    max_iters: int = 2000,
    maps: FeatureMap | Sequence[FeatureMap] | None = None,
) -> BowlResult:
    """Backward OWL: stage ``t`` weights ``Y * prod_{s>t} 1{A_s = d_s} / prod_{s>=t} pi_s``."""
    if data.horizon is None:
        raise ValidationError("bowl_fit needs a finite-horizon dataset")
    n = data.horizon + 1
    lams = [float(lambdas)] * n if np.isscalar(lambdas) else [float(v) for v in lambdas]
    if len(lams) != n:
        raise ValidationError("need one lambda per stage")
    if maps is None:
        maps = [_default_map()] * n
    elif isinstance(maps, FeatureMap):
        maps = [maps] * n
    res, regime, weights = _bowl(data, lams, max_iters, list(maps))
    return BowlResult(tuple(res), regime, tuple(weights))
