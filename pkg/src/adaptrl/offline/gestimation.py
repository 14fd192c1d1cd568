"""Contrast-based A-learning by G-estimation (binary actions)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import Dataset, DecisionRule, FeatureMap, Regime
from ..errors import NotBinaryAction, SingularSystem, ValidationError
from .models import FittedPropensity, PropensityModel, check_propensity
from .qlearning import _per_stage, _require_complete


@dataclass(frozen=True)
class ContrastModel:
    """``C_t(h, a; psi_t) = a * psi_t' H_t1`` with adjunct ``theta_t(H) = beta_t' H_t0``."""

    contrast_maps: tuple[FeatureMap, ...]
    adjunct_maps: tuple[FeatureMap, ...]
    psi: tuple[np.ndarray, ...]
    adjunct_coefs: tuple[np.ndarray, ...]
    propensities: tuple[FittedPropensity, ...]
    gamma: float
    state_dim: int
    hyperparams: dict = field(default_factory=dict)

    def contrast(self, t: int, H: np.ndarray, a=1) -> np.ndarray:
        _, h1 = self.contrast_maps[t].summarize(H, self.state_dim, t)
        return np.asarray(a, dtype=float) * (h1 @ self.psi[t])

    def regime(self) -> Regime:
        rules = []
        for t, (fmap, psi) in enumerate(zip(self.contrast_maps, self.psi)):
            d0, _ = fmap.dims(self.state_dim, t)
            rules.append(DecisionRule("deterministic", np.r_[np.zeros(d0), psi], fmap, 2))
        return Regime(tuple(rules), self.state_dim, provenance={"method": "g_estimation", "hyperparams": self.hyperparams})


@dataclass(frozen=True)
class GEstimationResult:
    model: ContrastModel
    regime: Regime


def _solve_stage(G, A, pi, h0, h1) -> tuple[np.ndarray, np.ndarray]:
    """Solve the stacked linear estimating equations for ``(beta, psi)``.

    Residual ``e = G - h0 beta - A h1 psi``; equations
    ``sum h0 e = 0`` (adjunct) and ``sum h1 (A - pi) e = 0`` (contrast, with
    ``lambda = dC/dpsi = h1``).
    """
    Ah1 = A[:, None] * h1
    r = (A - pi)[:, None] * h1
    M = np.block([[h0.T @ h0, h0.T @ Ah1], [r.T @ h0, r.T @ Ah1]])
    v = np.r_[h0.T @ G, r.T @ G]
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e12:
        raise SingularSystem("G-estimation system is singular; check the contrast and adjunct summaries")
    sol = np.linalg.solve(M, v)
    return sol[: h0.shape[1]], sol[h0.shape[1] :]


def g_estimation_fit(
    data: Dataset,
    contrast_maps: FeatureMap | Sequence[FeatureMap] | None = None,
    propensity_models: PropensityModel | Sequence[PropensityModel] | None = None,
    adjunct_maps: FeatureMap | Sequence[FeatureMap] | None = None,
    gamma: float = 1.0,
) -> GEstimationResult:
    """Backward G-estimation of the optimal blip-to-zero contrasts.

    ``contrast_maps`` supply the tailoring summary ``H_t1`` (their main
    summary is the default adjunct). Propensities default to the recorded
    behaviour probabilities when present, else a logistic fit. Earlier stages
    use the pseudo-outcome
    ``G_t = Y_{t+1} + gamma * (G_{t+1} + (d_{t+1} - A_{t+1}) psi_{t+1}' H_{t+1,1})``.
    """
    _require_complete(data)
    T = data.horizon
    if any(k != 2 for k in data.n_actions):
        raise NotBinaryAction("G-estimation is implemented for binary actions {0, 1}")
    p = data.state_dim
    cmaps = _per_stage(contrast_maps, T + 1, FeatureMap())
    if any(m.kind not in ("linear_interaction", "polynomial") for m in cmaps):
        raise ValidationError("contrast maps must have the (H0, H1 * a) structure")
    amaps = [a if a is not None else c for a, c in zip(_per_stage(adjunct_maps, T + 1, None), cmaps)]
    default_prop = PropensityModel("known") if not np.any(np.isnan(data.behavior_prob)) else PropensityModel()
    props = _per_stage(propensity_models, T + 1, default_prop)
    psi: list = [None] * (T + 1)
    beta: list = [None] * (T + 1)
    fitted: list = [None] * (T + 1)
    G = None
    for t in range(T, -1, -1):
        b = data.stage(t)
        H = data.histories(t)
        A = b.actions.astype(float)
        if t == T:
            G = b.rewards.copy()
        else:
            Hn = data.histories(t + 1)
            _, h1n = cmaps[t + 1].summarize(Hn, p, t + 1)
            blip = h1n @ psi[t + 1]
            d_next = (blip > 0).astype(float)
            An = data.stage(t + 1).actions.astype(float)
            G = b.rewards + gamma * (G + (d_next - An) * blip)
        fp = props[t].fit(H, b.actions, 2, p, t, recorded=b.behavior_prob)
        pi = fp.probs(H)[:, 1]
        check_propensity(pi)
        _, h1 = cmaps[t].summarize(H, p, t)
        h0, _ = amaps[t].summarize(H, p, t)
        beta[t], psi[t] = _solve_stage(G, A, pi, h0, h1)
        fitted[t] = fp
    hp = {"gamma": gamma, "propensity": [pm.kind for pm in props]}
    model = ContrastModel(tuple(cmaps), tuple(amaps), tuple(psi), tuple(beta), tuple(fitted), gamma, p, hp)
    return GEstimationResult(model, model.regime())
