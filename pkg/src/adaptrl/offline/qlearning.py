"""Backward-induction Q-learning (linear function approximation and tabular)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import Dataset, DecisionRule, FeatureMap, Regime
from ..errors import IndexOutOfRange, MissingReward, NotBinaryAction, ValidationError
from ..regression import ridge_fit, wls_fit


@dataclass(frozen=True)
class QModel:
    """Stage-wise linear Q-functions ``Q_t(H, a) = design_t(H, a) @ coefs[t]``.

    With the ``linear_interaction`` map the first ``d0`` coefficients are the
    main effect ``beta_t`` and the rest the treatment interaction ``psi_t``.
    """

    maps: tuple[FeatureMap, ...]
    coefs: tuple[np.ndarray, ...]
    gamma: float
    n_actions: tuple[int, ...]
    state_dim: int
    hyperparams: dict = field(default_factory=dict)

    @property
    def n_stages(self) -> int:
        return len(self.coefs)

    def q_values(self, t: int, H: np.ndarray) -> np.ndarray:
        """``(n, K_t)`` fitted Q-values; ``Q_{T+1} = 0`` beyond the last stage."""
        if t >= self.n_stages:
            return np.zeros((np.atleast_2d(H).shape[0], 1))
        K = self.n_actions[t]
        return np.column_stack([
            self.maps[t].design(H, a, K, self.state_dim, t) @ self.coefs[t] for a in range(K)
        ])

    def beta(self, t: int) -> np.ndarray:
        d0, _ = self.maps[t].dims(self.state_dim, t)
        return self.coefs[t][:d0]

    def psi(self, t: int) -> np.ndarray:
        d0, _ = self.maps[t].dims(self.state_dim, t)
        return self.coefs[t][d0:]

    def contrast(self, t: int, H: np.ndarray) -> np.ndarray:
        """Binary treatment-effect score ``psi_t' H_t1``."""
        if self.n_actions[t] != 2:
            raise NotBinaryAction("the treatment-effect score needs binary actions")
        q = self.q_values(t, H)
        return q[:, 1] - q[:, 0]

    def regime(self, threshold: float = 0.0) -> Regime:
        rules = tuple(
            DecisionRule("deterministic", c, m, k, threshold=threshold)
            for c, m, k in zip(self.coefs, self.maps, self.n_actions)
        )
        prov = {"method": "q_learning", "hyperparams": dict(self.hyperparams, threshold=threshold)}
        return Regime(rules, self.state_dim, provenance=prov)


@dataclass(frozen=True)
class QLearningResult:
    model: QModel
    regime: Regime


def _require_complete(data: Dataset) -> None:
    if data.horizon is None:
        raise ValidationError("finite-horizon estimators need a dataset with a fixed horizon")
    if np.any(np.isnan(data.rewards)):
        raise MissingReward("missing rewards: impute (LOCF) or drop incomplete trajectories first")


def _per_stage(maps, n_stages: int, default) -> list:
    if maps is None:
        return [default] * n_stages
    if isinstance(maps, (FeatureMap,)) or not isinstance(maps, Sequence):
        return [maps] * n_stages
    maps = list(maps)
    if len(maps) != n_stages:
        raise ValidationError(f"need one entry per stage ({n_stages}), got {len(maps)}")
    return maps


def q_learning_fit(
    data: Dataset,
    maps: FeatureMap | Sequence[FeatureMap] | None = None,
    gamma: float = 1.0,
    weights: Sequence[np.ndarray] | None = None,
    ridge: float = 0.0,
    seed: int | None = None,
) -> QLearningResult:
    """Fit ``Q_T, ..., Q_0`` by least squares on pseudo-outcomes.

    Stage ``t`` regresses ``Y_{t+1} + gamma * max_a Q_{t+1}(H_{t+1}, a)`` on
    ``design_t(H_t, A_t)``. ``weights`` (one positive array per stage) switch
    to weighted least squares; ``ridge`` adds an L2 penalty.
    """
    _require_complete(data)
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must lie in [0, 1]")
    T = data.horizon
    maps = _per_stage(maps, T + 1, FeatureMap())
    p = data.state_dim
    coefs: list[np.ndarray] = [None] * (T + 1)
    partial = None
    for t in range(T, -1, -1):
        b = data.stage(t)
        H = data.histories(t)
        K = data.actions_at(t)
        target = b.rewards.copy()
        if t < T:
            target = target + gamma * partial.q_values(t + 1, data.histories(t + 1)).max(axis=1)
        X = maps[t].design(H, b.actions, K, p, t)
        if weights is not None:
            coefs[t] = wls_fit(X, target, np.asarray(weights[t], dtype=float), ridge)
        else:
            coefs[t] = ridge_fit(X, target, ridge)
        filled = [c if c is not None else np.zeros(0) for c in coefs]
        partial = QModel(tuple(maps), tuple(filled), gamma, data.n_actions, p)
    hp = {"gamma": gamma, "ridge": ridge, "loss": "wls" if weights is not None else "ols"}
    if seed is not None:
        hp["seed"] = seed
    model = QModel(tuple(maps), tuple(coefs), gamma, data.n_actions, p, hp)
    return QLearningResult(model, model.regime())


def soft_threshold_regime(model: QModel, threshold: float) -> Regime:
    """Regime from ``model`` with the binary contrast soft-thresholded before the argmax."""
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    if any(k != 2 for k in model.n_actions):
        raise NotBinaryAction("soft-thresholding is defined for binary actions only")
    return model.regime(threshold)


def tabular_q_update(
    table: np.ndarray, x: int, a: int, y: float, x_next: int | None, alpha: float, gamma: float,
    absorbing: int | None = None,
) -> np.ndarray:
    """One temporal-difference update of a Q-table; returns a new table.

    ``x_next=None`` (or the absorbing state) marks a terminal transition with
    no continuation value.
    """
    Q = np.array(table, dtype=float, copy=True)
    S, K = Q.shape
    if not (0 <= x < S and 0 <= a < K):
        raise IndexOutOfRange(f"(state, action) = ({x}, {a}) outside table of shape {Q.shape}")
    if x_next is not None and not 0 <= x_next < S:
        raise IndexOutOfRange(f"next state {x_next} outside 0..{S - 1}")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    terminal = x_next is None or (absorbing is not None and x_next == absorbing)
    cont = 0.0 if terminal else float(Q[x_next].max())
    Q[x, a] += alpha * (y + gamma * cont - Q[x, a])
    return Q
