"""Contextual-bandit agents behind one contract.

``step(arms)`` chooses an arm without touching the learned statistics (it may
consume the agent's random stream) and returns a :class:`Decision` carrying
the selection distribution when it is known. ``absorb(arms, decision, reward)``
updates the statistics. A NaN reward (missing) leaves the statistics unchanged.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .core import RngSpec, as_generator
from .errors import (
    ClipBoundsInvalid,
    DimensionMismatch,
    MissingSelectionDistribution,
    NoAvailableArm,
    NotBinaryAction,
    RewardOutOfRange,
    ValidationError,
)
from .regression import DEFAULT_RIDGE_LAMBDA, NigPosterior, SuffStats, nig_sample, nig_update, ridge_fit


@dataclass(frozen=True)
class ArmFeatures:
    """Per-arm feature vectors ``f(X_t, a)`` (rows) and an availability mask."""

    features: np.ndarray
    available: np.ndarray | None = None

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.features, dtype=float))
        avail = np.ones(F.shape[0], bool) if self.available is None else np.asarray(self.available, bool)
        if avail.shape != (F.shape[0],):
            raise DimensionMismatch("availability mask needs one entry per arm")
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "available", avail)


@dataclass(frozen=True)
class Decision:
    action: int
    probs: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def prob(self) -> float | None:
        return None if self.probs is None else float(self.probs[self.action])


def _arms(arms) -> tuple[np.ndarray, np.ndarray]:
    F = np.atleast_2d(np.asarray(arms.features, dtype=float))
    avail = getattr(arms, "available", None)
    avail = np.ones(F.shape[0], bool) if avail is None else np.asarray(avail, bool)
    if not avail.any():
        raise NoAvailableArm("no arm is available at this decision point")
    return F, avail


def masked_argmax(scores: np.ndarray, available: np.ndarray) -> int:
    """Argmax over available arms; exact ties go to the lowest index."""
    s = np.where(available, scores, -np.inf)
    return int(np.argmax(s))


def _point_mass(k: int, a: int) -> np.ndarray:
    p = np.zeros(k)
    p[a] = 1.0
    return p


class Agent:
    """Base class: owns its random stream and an absorption counter."""

    name = "agent"

    def __init__(self, rng: RngSpec | np.random.Generator | int | None = None):
        self.rng = as_generator(rng)
        self.t = 0

    def step(self, arms) -> Decision:  # pragma: no cover - interface
        raise NotImplementedError

    def absorb(self, arms, decision: Decision, reward: float) -> None:
        self.t += 1
        if reward is None or np.isnan(reward):
            return
        self._absorb(arms, decision, float(reward))

    def _absorb(self, arms, decision: Decision, reward: float) -> None:
        pass

    def estimate(self) -> np.ndarray | None:
        return None


# --------------------------------------------------------------------------
# linear agents


class _RidgeAgent(Agent):
    def __init__(self, d: int, lam: float = DEFAULT_RIDGE_LAMBDA, rng=None):
        super().__init__(rng)
        self.stats = SuffStats.fresh(d, lam)
        self._cache = None

    def _factor(self):
        if self._cache is None or self._cache[0] is not self.stats:
            L = self.stats.cholesky()
            mu = np.linalg.solve(L.T, np.linalg.solve(L, self.stats.b))
            self._cache = (self.stats, L, mu)
        return self._cache[1], self._cache[2]

    def estimate(self) -> np.ndarray:
        return self._factor()[1]

    def _absorb(self, arms, decision, reward):
        F, _ = _arms(arms)
        self.stats = self.stats.update(F[decision.action], reward)


class LinUCB(_RidgeAgent):
    """Upper confidence bound ``f' mu + alpha sqrt(f' B^{-1} f)``."""

    name = "linucb"

    def __init__(self, d: int, alpha: float = 1.0, lam: float = DEFAULT_RIDGE_LAMBDA, rng=None):
        super().__init__(d, lam, rng)
        if alpha < 0:
            raise ValidationError("alpha must be >= 0")
        self.alpha = float(alpha)

    def ucb(self, F: np.ndarray) -> np.ndarray:
        L, mu = self._factor()
        Z = np.linalg.solve(L, F.T)
        return F @ mu + self.alpha * np.sqrt(np.sum(Z * Z, axis=0))

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        a = masked_argmax(self.ucb(F), avail)
        return Decision(a, _point_mass(F.shape[0], a))


class LinTS(_RidgeAgent):
    """Thompson sampling from ``N(mu_hat, nu^2 B^{-1})`` or, with ``nig=True``, a
    Normal-Inverse-Gamma posterior with prior ``N(0, sigma2 / lam I)``, ``IG(a0, b0)``."""

    name = "lints"

    def __init__(self, d: int, nu: float = 1.0, lam: float = DEFAULT_RIDGE_LAMBDA, nig: bool = False,
                 a0: float = 1.0, b0: float = 1.0, rng=None):
        super().__init__(d, lam, rng)
        if nu < 0:
            raise ValidationError("nu must be >= 0")
        self.nu = float(nu)
        self.posterior = NigPosterior(np.zeros(d), lam * np.eye(d), a0, b0) if nig else None

    def draw(self) -> np.ndarray:
        if self.posterior is not None:
            return nig_sample(self.posterior, self.rng)[0]
        L, mu = self._factor()
        if self.nu == 0.0:
            return mu
        z = self.rng.standard_normal(mu.size)
        return mu + self.nu * np.linalg.solve(L.T, z)

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        a = masked_argmax(F @ self.draw(), avail)
        return Decision(a)

    def estimate(self) -> np.ndarray:
        return self.posterior.mu if self.posterior is not None else super().estimate()

    def _absorb(self, arms, decision, reward):
        super()._absorb(arms, decision, reward)
        if self.posterior is not None:
            F, _ = _arms(arms)
            self.posterior = nig_update(self.posterior, F[decision.action][None, :], np.array([reward]))


class BootstrapTS(Agent):
    """Online bootstrap Thompson sampling with ``J`` double-or-nothing replicates."""

    name = "bts"

    def __init__(self, d: int, J: int = 20, lam: float = DEFAULT_RIDGE_LAMBDA, rng=None):
        super().__init__(rng)
        if J < 2:
            raise ValidationError("bootstrap Thompson sampling needs J >= 2 replicates")
        self.replicates = [SuffStats.fresh(d, lam) for _ in range(J)]
        self.weight_sums = np.zeros(J)

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        j = int(self.rng.integers(len(self.replicates)))
        mu = self.replicates[j].mean()
        return Decision(masked_argmax(F @ mu, avail), info={"replicate": j})

    def _absorb(self, arms, decision, reward):
        F, _ = _arms(arms)
        f = F[decision.action]
        w = 2.0 * (self.rng.random(len(self.replicates)) < 0.5)
        self.weight_sums += w
        self.replicates = [s.update(f, reward, wj) if wj else s for s, wj in zip(self.replicates, w)]

    def estimate(self) -> np.ndarray:
        return np.mean([s.mean() for s in self.replicates], axis=0)


class ACTS(_RidgeAgent):
    """Action-centered Thompson sampling with clipped send probability.

    Arm ``control`` is "do nothing". Each step draws a posterior sample to
    pick the preferred non-control arm (or a uniform one), estimates
    ``P(f' mu > 0)`` from ``n_draws`` posterior draws, clips it to
    ``[pi_min, pi_max]`` and sends that arm with the clipped probability.
    Statistics are fitted to the centered feature ``f (1{A != control} - pi)``.
    """

    name = "acts"

    def __init__(self, d: int, pi_min: float = 0.2, pi_max: float = 0.8, nu: float = 1.0,
                 lam: float = DEFAULT_RIDGE_LAMBDA, n_draws: int = 200, control: int = 0,
                 uniform_arm: bool = False, rng=None):
        super().__init__(d, lam, rng)
        if not 0.0 < pi_min <= pi_max < 1.0:
            raise ClipBoundsInvalid("need 0 < pi_min <= pi_max < 1")
        self.pi_min, self.pi_max = float(pi_min), float(pi_max)
        self.nu, self.n_draws, self.control = float(nu), int(n_draws), int(control)
        self.uniform_arm = bool(uniform_arm)

    def clip(self, mass: float) -> float:
        return float(min(self.pi_max, max(self.pi_min, mass)))

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        K = F.shape[0]
        cand = avail.copy()
        cand[self.control] = False
        if not cand.any():
            return Decision(self.control, _point_mass(K, self.control), {"pi": 0.0, "preferred": self.control})
        L, mu = self._factor()
        if self.uniform_arm:
            idx = np.flatnonzero(cand)
            abar = int(idx[self.rng.integers(idx.size)])
        else:
            draw = mu + self.nu * np.linalg.solve(L.T, self.rng.standard_normal(mu.size))
            abar = masked_argmax(F @ draw, cand)
        Z = self.rng.standard_normal((self.n_draws, mu.size))
        draws = mu + self.nu * np.linalg.solve(L.T, Z.T).T
        mass = float(np.mean(draws @ F[abar] > 0.0))
        pi = self.clip(mass)
        send = bool(self.rng.random() < pi)
        probs = np.zeros(K)
        probs[abar] = pi
        probs[self.control] = 1.0 - pi
        return Decision(abar if send else self.control, probs, {"pi": pi, "preferred": abar, "mass": mass})

    def _absorb(self, arms, decision, reward):
        if decision.info.get("pi", 0.0) == 0.0:
            return
        F, _ = _arms(arms)
        pi = decision.info["pi"]
        f = F[decision.info["preferred"]] * (float(decision.action != self.control) - pi)
        self.stats = self.stats.update(f, reward)


# --------------------------------------------------------------------------
# semiparametric (centered) estimators


@dataclass(frozen=True)
class LogEntry:
    features: np.ndarray
    action: int
    reward: float
    probs: np.ndarray | None


def centered_estimate(log: Sequence[LogEntry], variant: str = "bose", lam: float = DEFAULT_RIDGE_LAMBDA) -> np.ndarray:
    """Centered regression estimate of ``mu`` robust to an action-independent baseline.

    ``f_bar = f(X, A) - E_pi[f(X, .)]`` with ``pi`` the logged selection
    distribution. ``bose``: ``(lam I + sum f_bar f_bar')^{-1} sum f_bar Y``;
    ``kim``: ``(I + sum f_bar f_bar' + sum Cov_pi(f))^{-1} sum 2 f_bar Y``.
    """
    if variant not in ("bose", "kim"):
        raise ValidationError("variant must be 'bose' or 'kim'")
    if not log:
        raise ValidationError("empty log")
    d = np.asarray(log[0].features).shape[1]
    B = (lam if variant == "bose" else 1.0) * np.eye(d)
    b = np.zeros(d)
    for e in log:
        if e.probs is None:
            raise MissingSelectionDistribution("centering needs the logged selection distribution")
        if np.isnan(e.reward):
            continue
        fbar, cov = centering_terms(e.features, e.probs, e.action)
        B += np.outer(fbar, fbar)
        if variant == "kim":
            B += cov
            b += 2.0 * fbar * e.reward
        else:
            b += fbar * e.reward
    return np.linalg.solve(B, b)


def centering_terms(F: np.ndarray, probs: np.ndarray, action: int) -> tuple[np.ndarray, np.ndarray]:
    F = np.asarray(F, dtype=float)
    p = np.asarray(probs, dtype=float)
    mean = p @ F
    C = F - mean
    return F[action] - mean, (C * p[:, None]).T @ C


class CenteredAgent(Agent):
    """Epsilon-greedy on a centered (BOSE or Kim) estimate; the explicit
    selection distribution is recorded so the centering is exact."""

    name = "centered"

    def __init__(self, d: int, variant: str = "bose", epsilon: float = 0.2, lam: float = DEFAULT_RIDGE_LAMBDA, rng=None):
        super().__init__(rng)
        if variant not in ("bose", "kim"):
            raise ValidationError("variant must be 'bose' or 'kim'")
        if not 0.0 <= epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        self.variant, self.epsilon = variant, float(epsilon)
        self.B = (lam if variant == "bose" else 1.0) * np.eye(d)
        self.b = np.zeros(d)

    def estimate(self) -> np.ndarray:
        return np.linalg.solve(self.B, self.b)

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        probs = epsilon_greedy_probs(F @ self.estimate(), self.epsilon, avail)
        return Decision(_sample(self.rng, probs), probs)

    def _absorb(self, arms, decision, reward):
        if decision.probs is None:
            raise MissingSelectionDistribution("centering needs the selection distribution")
        F, _ = _arms(arms)
        fbar, cov = centering_terms(F, decision.probs, decision.action)
        self.B += np.outer(fbar, fbar)
        if self.variant == "kim":
            self.B += cov
            self.b += 2.0 * fbar * reward
        else:
            self.b += fbar * reward


# --------------------------------------------------------------------------
# actor-critic


def _expit(z):
    return 1.0 / (1.0 + np.exp(-z))


class ActorCritic(Agent):
    """Binary-action actor-critic with a logistic policy ``pi(1|x) = expit(g(x)' theta)``.

    The critic is a ridge fit of the reward on the chosen arm's feature. After
    each absorption the actor re-maximizes
    ``J(theta) = mean_tau [sum_a Yhat(x_tau, a) pi(a | x_tau) - lam theta' g g' theta]``
    by gradient ascent from the previous ``theta``. ``policy_features`` maps the
    arm features to ``g(x)``; it defaults to the arm-1 feature.
    """

    name = "actor_critic"

    def __init__(self, d: int, policy_dim: int | None = None, lam: float = 0.1, ridge: float = DEFAULT_RIDGE_LAMBDA,
                 policy_features: Callable[[np.ndarray], np.ndarray] | None = None, ascent_steps: int = 20, rng=None):
        super().__init__(rng)
        self.critic = SuffStats.fresh(d, ridge)
        self.lam = float(lam)
        self.policy_features = policy_features or (lambda F: F[1])
        self.theta = np.zeros(policy_dim if policy_dim is not None else d)
        self.ascent_steps = int(ascent_steps)
        self._G: list[np.ndarray] = []
        self._F0: list[np.ndarray] = []
        self._F1: list[np.ndarray] = []

    def prob_one(self, F: np.ndarray) -> float:
        return float(_expit(self.policy_features(F) @ self.theta))

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        if F.shape[0] != 2:
            raise NotBinaryAction("the actor-critic agent handles two actions")
        p1 = self.prob_one(F)
        if not avail[1]:
            p1 = 0.0
        elif not avail[0]:
            p1 = 1.0
        a = int(self.rng.random() < p1)
        return Decision(a, np.array([1.0 - p1, p1]))

    def estimate(self) -> np.ndarray:
        return self.critic.mean()

    def _absorb(self, arms, decision, reward):
        F, _ = _arms(arms)
        self.critic = self.critic.update(F[decision.action], reward)
        self._G.append(np.asarray(self.policy_features(F), dtype=float))
        self._F0.append(F[0])
        self._F1.append(F[1])
        self.theta = self._ascend()

    def objective(self, theta: np.ndarray) -> float:
        G = np.array(self._G)
        beta = self.critic.mean()
        diff = (np.array(self._F1) - np.array(self._F0)) @ beta
        y0 = np.array(self._F0) @ beta
        pen = self.lam * np.mean((G @ theta) ** 2)
        return float(np.mean(y0 + diff * _expit(G @ theta)) - pen)

    def _ascend(self) -> np.ndarray:
        G = np.array(self._G)
        beta = self.critic.mean()
        diff = (np.array(self._F1) - np.array(self._F0)) @ beta
        S = G.T @ G / G.shape[0]
        smooth = 0.25 * np.max(np.abs(diff)) * np.trace(S) + 2.0 * self.lam * np.linalg.norm(S, 2)
        step = 1.0 / max(smooth, 1e-8)
        th = self.theta.copy()
        for _ in range(self.ascent_steps):
            s = _expit(G @ th)
            grad = G.T @ (diff * s * (1 - s)) / G.shape[0] - 2.0 * self.lam * S @ th
            th = th + step * grad
        return th


# --------------------------------------------------------------------------
# adversarial and simple baselines


class EXP3(Agent):
    """Exponential weights with ``eta``-uniform mixing for rewards in ``[0, 1]``.

    ``share > 0`` adds fixed-share mixing of the weights after each update,
    which lets the agent track a changing best arm.
    """

    name = "exp3"

    def __init__(self, n_arms: int, eta: float = 0.1, share: float = 0.0, rng=None):
        super().__init__(rng)
        if not 0.0 < eta <= 1.0:
            raise ValidationError("eta must lie in (0, 1]")
        if not 0.0 <= share < 1.0:
            raise ValidationError("share must lie in [0, 1)")
        self.K, self.eta, self.share = int(n_arms), float(eta), float(share)
        self.logw = np.zeros(self.K)

    def probs(self) -> np.ndarray:
        z = self.logw - self.logw.max()
        w = np.exp(z)
        return (1.0 - self.eta) * w / w.sum() + self.eta / self.K

    def step(self, arms=None) -> Decision:
        p = self.probs()
        return Decision(_sample(self.rng, p), p)

    def absorb(self, arms, decision, reward):
        if reward is not None and not np.isnan(reward) and not 0.0 <= reward <= 1.0:
            raise RewardOutOfRange("EXP3 rewards must be pre-scaled to [0, 1]")
        super().absorb(arms, decision, reward)

    def _absorb(self, arms, decision, reward):
        p = decision.probs if decision.probs is not None else self.probs()
        self.logw[decision.action] += self.eta * reward / (p[decision.action] * self.K)
        if self.share > 0:
            m = self.logw.max()
            tot = np.log(np.sum(np.exp(self.logw - m))) + m
            self.logw = np.logaddexp(np.log1p(-self.share) + self.logw, np.log(self.share / self.K) + tot)
        self.logw -= self.logw.max()


def epsilon_greedy_probs(scores: np.ndarray, epsilon: float, available: np.ndarray | None = None) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    avail = np.ones(s.size, bool) if available is None else np.asarray(available, bool)
    p = np.where(avail, epsilon / avail.sum(), 0.0)
    p[masked_argmax(s, avail)] += 1.0 - epsilon
    return p


def boltzmann_probs(scores: np.ndarray, temperature: float, available: np.ndarray | None = None) -> np.ndarray:
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    s = np.asarray(scores, dtype=float) / temperature
    avail = np.ones(s.size, bool) if available is None else np.asarray(available, bool)
    s = np.where(avail, s, -np.inf)
    e = np.exp(s - s[avail].max())
    return e / e.sum()


def _sample(rng: np.random.Generator, p: np.ndarray) -> int:
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))


def baseline_step(kind: str, scores: np.ndarray, rng, param: float, available=None) -> tuple[int, np.ndarray]:
    """``kind="epsilon_greedy"`` (param = epsilon) or ``"boltzmann"`` (param = temperature)."""
    if kind == "epsilon_greedy":
        if not 0.0 <= param <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        p = epsilon_greedy_probs(scores, param, available)
    elif kind == "boltzmann":
        p = boltzmann_probs(scores, param, available)
    else:
        raise ValidationError(f"unknown baseline kind {kind!r}")
    return _sample(as_generator(rng), p), p


class BaselineAgent(_RidgeAgent):
    """Epsilon-greedy or Boltzmann exploration around ridge estimates."""

    name = "baseline"

    def __init__(self, d: int, kind: str = "epsilon_greedy", param: float = 0.1, lam: float = DEFAULT_RIDGE_LAMBDA, rng=None):
        super().__init__(d, lam, rng)
        self.kind, self.param = kind, float(param)
        baseline_step(kind, np.zeros(2), np.random.default_rng(0), self.param)

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        a, p = baseline_step(self.kind, F @ self.estimate(), self.rng, self.param, avail)
        return Decision(a, p)


class UniformAgent(Agent):
    name = "uniform"

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        p = avail / avail.sum()
        return Decision(_sample(self.rng, p), p)


class OracleAgent(Agent):
    """Plays the arm with the largest true conditional mean (``arms.means``)."""

    name = "oracle"

    def step(self, arms) -> Decision:
        F, avail = _arms(arms)
        a = masked_argmax(np.asarray(arms.means, dtype=float), avail)
        return Decision(a, _point_mass(F.shape[0], a))


AGENTS = {
    "linucb": LinUCB, "lints": LinTS, "bts": BootstrapTS, "acts": ACTS, "centered": CenteredAgent,
    "actor_critic": ActorCritic, "exp3": EXP3, "baseline": BaselineAgent, "uniform": UniformAgent,
    "oracle": OracleAgent,
}


def make_agent(name: str, d: int, n_arms: int, rng, **params) -> Agent:
    """Build a registered agent; ``d`` and ``n_arms`` are passed where needed."""
    if name not in AGENTS:
        raise ValidationError(f"unknown agent {name!r}; choose from {sorted(AGENTS)}")
    cls = AGENTS[name]
    if name in ("uniform", "oracle"):
        return cls(rng=rng, **params)
    if name == "exp3":
        return cls(n_arms, rng=rng, **params)
    return cls(d, rng=rng, **params)


# --------------------------------------------------------------------------
# interaction logs and replay


@dataclass
class InteractionLog:
    rows: list = field(default_factory=list)

    def record(self, t: int, arms, decision: Decision, reward: float) -> None:
        F, avail = _arms(arms)
        self.rows.append((t, F.copy(), int(decision.action),
                          None if decision.probs is None else np.asarray(decision.probs, float).copy(),
                          float(reward), avail.copy()))

    def entries(self) -> list[LogEntry]:
        return [LogEntry(F, a, y, p) for _, F, a, p, y, _ in self.rows]

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        if not self.rows:
            return buf.getvalue()
        K, d = self.rows[0][1].shape
        w.writerow(["t", *[f"f{a}_{j}" for a in range(K) for j in range(d)], "arm", "selection_prob",
                    "distribution", "reward", "availability"])
        for t, F, a, p, y, av in self.rows:
            w.writerow([t, *[repr(float(v)) for v in F.reshape(-1)], a,
                        "" if p is None else repr(float(p[a])),
                        "" if p is None else json.dumps([float(v) for v in p]),
                        "" if np.isnan(y) else repr(y), json.dumps([int(v) for v in av])])
        return buf.getvalue()


def replay(agent: Agent, log: InteractionLog) -> list[int]:
    """Re-run ``agent`` on a logged stream of contexts and rewards; returns its actions.

    Rewards are only meaningful where the replayed action matches the logged
    one, so replay is for determinism checks on the agent's own logs.
    """
    actions = []
    for _, F, _, _, y, av in log.rows:
        arms = ArmFeatures(F, av)
        dec = agent.step(arms)
        actions.append(dec.action)
        agent.absorb(arms, dec, y)
    return actions
