"""Indefinite-horizon policy learning for time-homogeneous Markov data.

Both estimators work on transitions ``(X_t, A_t, Y_{t+1}, X_{t+1})`` pooled over
trajectories; the continuation at an absorbing (or unrecorded) next state is
zero because the features vanish there.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from .core import Dataset, DecisionRule, MarkovFeature, Regime, as_generator
from .errors import MissingReward, PositivityViolation, SingularDesign, SingularW, ValidationError
from .regression import cholesky_spd

NM_OPTIONS = {"xatol": 1e-8, "fatol": 1e-8, "maxfev": 5000}
TIE_TOL = 1e-6


class NoConvergence(UserWarning):
    """Optimizer stopped on its evaluation budget; best point returned."""


@dataclass(frozen=True)
class Transitions:
    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    X_next: np.ndarray
    live_next: np.ndarray
    first: np.ndarray
    n_traj: int


def transitions(data: Dataset, feat: MarkovFeature) -> Transitions:
    if np.any(np.isnan(data.rewards)):
        raise MissingReward("missing rewards: impute or drop first")
    n = data.n_rows
    last = data.offsets[1:] - 1
    X_next = np.empty_like(data.states)
    X_next[:-1] = data.states[1:]
    X_next[last] = data.terminal_states
    known = ~np.any(np.isnan(X_next), axis=1)
    X_next = np.where(known[:, None], X_next, 0.0)
    live = known & ~feat.is_absorbing(X_next)
    first = data.offsets[:-1]
    return Transitions(data.states, data.actions, data.rewards, X_next, live, first, data.n_trajectories)


def _chol_W(W: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvalsh(W)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise SingularW("weight matrix is singular: features do not span their dimension on this data")
    try:
        return cholesky_spd(W)
    except SingularDesign as exc:
        raise SingularW("weight matrix is not positive definite") from exc


def _stationary_regime(theta, feat: MarkovFeature, method: str, hp: dict) -> Regime:
    rule = DecisionRule("deterministic", theta, feat, feat.n_actions)
    p = feat.state_dim
    return Regime((rule,), p, stationary=True, provenance={"method": method, "hyperparams": hp})


# --------------------------------------------------------------------------
# GGQ


@dataclass(frozen=True)
class GgqSolution:
    theta: np.ndarray
    objective_value: float
    gamma: float
    minima: tuple[tuple[np.ndarray, float], ...]
    non_unique: bool
    converged: bool
    trace: tuple[dict, ...] = field(repr=False)
    regime: Regime | None = field(default=None, repr=False)

    def q_values(self, feat: MarkovFeature, X: np.ndarray) -> np.ndarray:
        return np.column_stack([feat.design(X, a) @ self.theta for a in range(feat.n_actions)])


class GgqObjective:
    """``M(theta) = D(theta)' W^{-1} D(theta)`` with
    ``D(theta) = P_N sum_t (Y + gamma max_a' Q(X', a') - Q(X, A)) psi(X, A)``."""

    def __init__(self, tr: Transitions, feat: MarkovFeature, gamma: float):
        self.n = tr.n_traj
        self.psi = feat.design(tr.X, tr.A)
        self.psi_next = np.stack([feat.design(tr.X_next, a) for a in range(feat.n_actions)])
        self.psi_next[:, ~tr.live_next] = 0.0
        self.gamma = gamma
        self.b = self.psi.T @ tr.Y / self.n
        self.G = self.psi.T @ self.psi / self.n
        self.L = _chol_W(self.G)

    def D(self, theta: np.ndarray) -> np.ndarray:
        qn = (self.psi_next @ theta).max(axis=0)
        return self.b + self.gamma * (self.psi.T @ qn) / self.n - self.G @ theta

    def __call__(self, theta: np.ndarray) -> float:
        d = self.D(theta)
        return float(d @ linalg.cho_solve((self.L, True), d))

    def polish(self, theta: np.ndarray, max_rounds: int = 50) -> np.ndarray:
        """Exact root of ``D`` on the linear piece selected by the greedy next actions."""
        rows = np.arange(self.psi_next.shape[1])
        for _ in range(max_rounds):
            greedy = np.argmax(self.psi_next @ theta, axis=0)
            nxt = self.psi_next[greedy, rows]
            A = self.G - self.gamma * (self.psi.T @ nxt) / self.n
            try:
                new = np.linalg.solve(A, self.b)
            except np.linalg.LinAlgError:
                return theta
            if np.array_equal(np.argmax(self.psi_next @ new, axis=0), greedy):
                return new
            theta = new
        return theta


def ggq_fit(
    data: Dataset, feat: MarkovFeature, gamma: float = 0.9, restarts: int = 10, seed: int = 0,
    init_scale: float | None = None,
) -> GgqSolution:
    """Greedy-gradient Q-learning: minimize ``M(theta)`` by multi-start Nelder-Mead.

    Start 0 is ``theta = 0``; the others are Gaussian with scale
    ``init_scale`` (default ``max|Y| / (1 - gamma)``). Each Nelder-Mead result
    is refined by solving ``D = 0`` on its linear piece and kept only if that
    lowers ``M``. Ties (minima within ``1e-6`` of the best) go to the lowest
    start index and are reported in ``minima``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValidationError("gamma must lie in (0, 1)")
    if restarts < 1:
        raise ValidationError("need at least one start")
    tr = transitions(data, feat)
    obj = GgqObjective(tr, feat, gamma)
    q = obj.G.shape[0]
    g = as_generator(seed)
    scale = init_scale if init_scale is not None else max(float(np.max(np.abs(tr.Y))), 1e-3) / (1 - gamma)
    starts = [np.zeros(q)] + [scale * g.standard_normal(q) for _ in range(restarts - 1)]
    results, trace = [], []
    for i, x0 in enumerate(starts):
        f0 = obj(x0)
        res = optimize.minimize(obj, x0, method="Nelder-Mead", options=NM_OPTIONS)
        theta, val = res.x, float(res.fun)
        pol = obj.polish(theta)
        pval = obj(pol)
        refined = pval < val
        if refined:
            theta, val = pol, pval
        if val > f0:
            theta, val = x0, f0
        converged = bool(res.success) or refined
        results.append((theta, val))
        trace.append({"start": i, "initial_objective": f0, "objective": val, "nfev": int(res.nfev),
                      "nit": int(res.nit), "converged": converged, "polished": refined})
    vals = np.array([v for _, v in results])
    best = int(np.argmin(vals))
    near = [(results[i][0], float(vals[i])) for i in range(len(results)) if vals[i] <= vals[best] + TIE_TOL]
    distinct = [th for th, _ in near if not np.allclose(th, results[best][0], atol=1e-4, rtol=1e-4)]
    converged = trace[best]["converged"]
    if not converged:
        warnings.warn("GGQ optimizer hit its evaluation cap; returning best point", NoConvergence, stacklevel=2)
    theta = results[best][0]
    hp = {"gamma": gamma, "restarts": restarts, "seed": seed}
    return GgqSolution(theta, float(vals[best]), gamma, tuple(near), bool(distinct), converged, tuple(trace),
                       _stationary_regime(theta, feat, "ggq", hp))


# --------------------------------------------------------------------------
# V-learning


@dataclass(frozen=True)
class VlearnFit:
    """Value-model fit for one candidate policy."""

    theta: np.ndarray
    objective_value: float
    value: float
    ratios: np.ndarray = field(repr=False)
    policy: Regime = field(repr=False)


@dataclass(frozen=True)
class VlearnSolution:
    theta: np.ndarray
    objective_value: float
    value: float
    gamma: float
    candidates: tuple[VlearnFit, ...] = field(repr=False)
    best_index: int
    trace: tuple[dict, ...] = field(repr=False, default=())
    regime: Regime | None = field(default=None, repr=False)

    @property
    def best(self) -> VlearnFit:
        return self.candidates[self.best_index]


def _policy_probs_taken(policy: Regime, X: np.ndarray, A: np.ndarray) -> np.ndarray:
    P = policy.probs(0, X)
    return P[np.arange(A.size), A]


def vlearning_evaluate(
    data: Dataset, feat: MarkovFeature, policy: Regime, gamma: float = 0.9, lam: float = 0.01,
    W: np.ndarray | None = None, behavior_probs: np.ndarray | None = None, _tr: Transitions | None = None,
) -> VlearnFit:
    """Fit ``V(x; theta) = phi(x)' theta`` for one policy.

    ``Lambda(theta) = P_N sum_t rho_t (Y + gamma V(X') - V(X)) phi(X) = b - A theta``
    with ``rho = d(A|X) / pi(A|X)``; the penalized quadratic form
    ``Lambda' W^{-1} Lambda + lam ||theta||^2`` has the closed-form minimizer
    ``(A' W^{-1} A + lam I)^{-1} A' W^{-1} b``.
    """
    tr = _tr or transitions(data, feat)
    pb = data.behavior_prob if behavior_probs is None else np.asarray(behavior_probs, dtype=float)
    d = _policy_probs_taken(policy, tr.X, tr.A)
    bad = (d > 0) & ~(pb > 0)
    if np.any(bad):
        raise PositivityViolation("behaviour probability unknown or zero where the candidate policy puts mass")
    rho = np.where(d > 0, d / np.where(pb > 0, pb, 1.0), 0.0)
    phi = feat.state_design(tr.X)
    phi_n = feat.state_design(tr.X_next)
    phi_n[~tr.live_next] = 0.0
    n = tr.n_traj
    A = (phi * rho[:, None]).T @ (phi - gamma * phi_n) / n
    b = (phi * rho[:, None]).T @ tr.Y / n
    q = phi.shape[1]
    Wm = np.eye(q) if W is None else np.asarray(W, dtype=float)
    L = _chol_W(Wm)
    WiA = linalg.cho_solve((L, True), A)
    Wib = linalg.cho_solve((L, True), b)
    lhs = A.T @ WiA + lam * np.eye(q)
    try:
        theta = linalg.solve(lhs, A.T @ Wib, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise SingularW("V-learning normal equations are singular; use lam > 0") from exc
    lam_vec = b - A @ theta
    objv = float(lam_vec @ linalg.cho_solve((L, True), lam_vec) + lam * theta @ theta)
    value = float(np.mean(phi[tr.first] @ theta))
    return VlearnFit(theta, objv, value, rho, policy)


def deterministic_policies(feat: MarkovFeature, limit: int = 4096) -> list[Regime]:
    """Every deterministic stationary policy over the live tabular states."""
    if feat.kind != "tabular":
        raise ValidationError("policy enumeration needs tabular features")
    live = list(range(feat.live_states.size))
    K = feat.n_actions
    if K ** len(live) > limit:
        raise ValidationError(f"{K ** len(live)} deterministic policies exceed the enumeration limit {limit}")
    out = []
    for choice in itertools.product(range(K), repeat=len(live)):
        theta = np.zeros(feat.dim)
        for s, a in zip(live, choice):
            theta[s * K + a] = 1.0
        out.append(_stationary_regime(theta, feat, "vlearning", {"policy": list(choice)}))
    return out


def softmax_policy(theta_pi: np.ndarray, feat: MarkovFeature, temperature: float = 1.0) -> Regime:
    rule = DecisionRule("softmax", theta_pi, feat, feat.n_actions, temperature=temperature)
    return Regime((rule,), feat.state_dim, stationary=True, provenance={"method": "vlearning"})


def vlearning_fit(
    data: Dataset,
    feat: MarkovFeature,
    gamma: float = 0.9,
    lam: float = 0.01,
    candidates: Sequence[Regime] | None = None,
    restarts: int = 10,
    seed: int = 0,
    W: np.ndarray | None = None,
) -> VlearnSolution:
    """Pick the policy with the largest fitted value averaged over initial states.

    ``candidates`` is an explicit search grid; when omitted, tabular features
    enumerate all deterministic policies and other features run multi-start
    Nelder-Mead over softmax parameters.
    """
    if not 0.0 < gamma < 1.0:
        raise ValidationError("gamma must lie in (0, 1)")
    tr = transitions(data, feat)
    trace: list[dict] = []
    if candidates is None and feat.kind == "tabular":
        candidates = deterministic_policies(feat)
    if candidates is not None:
        fits = [vlearning_evaluate(data, feat, c, gamma, lam, W, _tr=tr) for c in candidates]
    else:
        g = as_generator(seed)
        fits = []

        def negval(th):
            return -vlearning_evaluate(data, feat, softmax_policy(th, feat), gamma, lam, W, _tr=tr).value

        for i in range(restarts):
            x0 = np.zeros(feat.dim) if i == 0 else g.standard_normal(feat.dim)
            res = optimize.minimize(negval, x0, method="Nelder-Mead", options=NM_OPTIONS)
            fits.append(vlearning_evaluate(data, feat, softmax_policy(res.x, feat), gamma, lam, W, _tr=tr))
            trace.append({"start": i, "value": -float(res.fun), "nfev": int(res.nfev), "converged": bool(res.success)})
    values = np.array([f.value for f in fits])
    best = int(np.argmax(values))
    chosen = fits[best].policy
    hp = {"gamma": gamma, "lambda": lam, "n_candidates": len(fits), "seed": seed}
    regime = Regime(chosen.rules, chosen.state_dim, stationary=True, provenance={"method": "vlearning", "hyperparams": hp})
    return VlearnSolution(fits[best].theta, fits[best].objective_value, float(values[best]), gamma,
                          tuple(fits), best, tuple(trace), regime)
