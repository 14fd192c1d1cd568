"""Generative environments with known optima.

Three families:

* :class:`SmartSpec` - multistage randomized trial with a responder tailoring
  variable; optimal regime and value in closed form.
* :class:`ObservationalSpec` - single-stage confounded design for the
  double-robustness experiments.
* :class:`BanditEnvSpec` - (semi)linear contextual bandit, optionally with an
  action-independent baseline, habituation and missing rewards.
* :class:`MdpSpec` - finite time-homogeneous MDP with an absorbing state,
  solvable exactly by dynamic programming.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import (
    Dataset,
    DecisionRule,
    FeatureMap,
    RngSpec,
    Regime,
    as_generator,
)
from .errors import IndexOutOfRange, ValidationError


def _expit(z):
    return 1.0 / (1.0 + np.exp(-z))


def expected_positive_part(a: float, b: float) -> float:
    """``E[max(0, a + b Z)]`` for standard normal ``Z``."""
    s = abs(b)
    if s == 0.0:
        return max(0.0, a)
    return a * stats.norm.cdf(a / s) + s * stats.norm.pdf(a / s)


# --------------------------------------------------------------------------
# SMART


@dataclass(frozen=True)
class SmartSpec:
    """Sequential randomized trial with ``n_stages`` decision points.

    State at every stage is ``(x0, R_t)``: the baseline covariate and the
    current responder indicator ``R_t = 1{x0 + u_t > response_threshold}``
    (``R_0 = 0``). Stage rewards::

        Y_1     = beta[0] . (1, x0)              + A_0 psi[0] . (1, x0)  + sigma e
        Y_{t+1} = beta[t] . (1, x0, R_t, A_{t-1}) + A_t psi[t] . (1, R_t) + sigma e

    Randomization: ``P(A_0 = 1) = stage_probs[0][0]`` and, for later stages,
    ``P(A_t = 1 | R_t = r) = stage_probs[t][r]`` (non-responders first).
    """

    n_stages: int = 2
    stage_probs: tuple = ((0.5,), (0.5, 0.3))
    beta: tuple = ((1.0, 0.5), (0.5, 0.5, 1.0, 0.3))
    psi: tuple = ((-0.5, 1.0), (0.8, -1.6))
    response_threshold: float = 0.0
    response_noise: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValidationError("a SMART needs at least one stage")
        for name in ("stage_probs", "beta", "psi"):
            val = tuple(tuple(float(v) for v in row) for row in getattr(self, name))
            if len(val) != self.n_stages:
                raise ValidationError(f"{name} needs one entry per stage")
            object.__setattr__(self, name, val)
        for t, row in enumerate(self.stage_probs):
            if len(row) != (1 if t == 0 else 2):
                raise ValidationError(f"stage_probs[{t}] has the wrong length")
            if any(not 0.0 < p < 1.0 for p in row):
                raise ValidationError("randomization probabilities must lie in (0, 1)")
        for t, (b, s) in enumerate(zip(self.beta, self.psi)):
            if len(b) != (2 if t == 0 else 4) or len(s) != 2:
                raise ValidationError(f"coefficient lengths wrong at stage {t}")
        if self.sigma < 0 or self.response_noise < 0:
            raise ValidationError("noise scales must be >= 0")

    @property
    def horizon(self) -> int:
        return self.n_stages - 1

    @property
    def response_rate(self) -> float:
        scale = np.sqrt(1.0 + self.response_noise**2)
        return float(stats.norm.cdf(-self.response_threshold / scale))

    def carryover(self, t: int) -> float:
        """Effect of ``A_t`` on the next stage's reward."""
        return self.beta[t + 1][3] if t + 1 < self.n_stages else 0.0

    def blip(self, t: int, x0: np.ndarray, r: np.ndarray) -> np.ndarray:
        """True optimal-contrast ``Q_t(h, 1) - Q_t(h, 0)``."""
        c0, c1 = self.psi[t]
        tail = x0 if t == 0 else r
        return c0 + self.carryover(t) + c1 * np.asarray(tail, dtype=float)

    def mean_reward(self, t: int, x0, r, a_prev, a) -> np.ndarray:
        """``E[Y_{t+1} | H_t, A_t]`` (the noiseless part of the stage reward)."""
        x0, r, a_prev, a = (np.asarray(v, dtype=float) for v in (x0, r, a_prev, a))
        b, s = self.beta[t], self.psi[t]
        if t == 0:
            return b[0] + b[1] * x0 + a * (s[0] + s[1] * x0)
        return b[0] + b[1] * x0 + b[2] * r + b[3] * a_prev + a * (s[0] + s[1] * r)

    def optimal_value(self) -> float:
        q = self.response_rate
        v = self.beta[0][0] + expected_positive_part(self.psi[0][0] + self.carryover(0), self.psi[0][1])
        for t in range(1, self.n_stages):
            c = self.psi[t][0] + self.carryover(t)
            v += self.beta[t][0] + self.beta[t][2] * q
            v += (1 - q) * max(0.0, c) + q * max(0.0, c + self.psi[t][1])
        return float(v)

    def stage_feature_maps(self) -> list[FeatureMap]:
        """Correctly specified Q-function feature maps (main effect, blip)."""
        maps = [FeatureMap("linear_interaction", ("X0_0",), ("X0_0",))]
        for t in range(1, self.n_stages):
            maps.append(FeatureMap("linear_interaction", (f"X{t}_0", f"X{t}_1", f"A{t - 1}"), (f"X{t}_1",)))
        return maps

    def oracle_regime(self) -> Regime:
        rules = []
        for t, fmap in enumerate(self.stage_feature_maps()):
            d0, d1 = fmap.dims(2, t)
            theta = np.zeros(d0 + d1)
            theta[d0] = self.psi[t][0] + self.carryover(t)
            theta[d0 + 1] = self.psi[t][1]
            rules.append(DecisionRule("deterministic", theta, fmap, 2))
        return Regime(tuple(rules), state_dim=2, provenance={"method": "oracle", "env": "smart"})


@dataclass(frozen=True)
class SmartSample:
    dataset: Dataset
    oracle_regime: Regime
    oracle_value: float
    oracle_stage_blips: tuple[np.ndarray, ...]


def smart_generate(spec: SmartSpec, n: int, rng: RngSpec | np.random.Generator | int) -> SmartSample:
    g = as_generator(rng)
    x0 = g.standard_normal(n)
    states, actions, rewards, probs, blips = [], [], [], [], []
    a_prev = np.zeros(n)
    for t in range(spec.n_stages):
        if t == 0:
            r = np.zeros(n)
            p1 = np.full(n, spec.stage_probs[0][0])
        else:
            r = (x0 + spec.response_noise * g.standard_normal(n) > spec.response_threshold).astype(float)
            p1 = np.where(r == 1.0, spec.stage_probs[t][1], spec.stage_probs[t][0])
        a = (g.random(n) < p1).astype(np.int64)
        y = spec.mean_reward(t, x0, r, a_prev, a) + spec.sigma * g.standard_normal(n)
        states.append(np.column_stack([x0, r]))
        actions.append(a)
        rewards.append(y)
        probs.append(np.where(a == 1, p1, 1.0 - p1))
        blips.append(spec.blip(t, x0, r))
        a_prev = a.astype(float)
    data = Dataset.from_stage_arrays(
        states, actions, rewards, probs, n_actions=2, metadata={"env": "smart"},
    )
    return SmartSample(data, spec.oracle_regime(), spec.optimal_value(), tuple(blips))


def smart_rollout_returns(spec: SmartSpec, regime: Regime, n: int, rng, gamma: float = 1.0) -> np.ndarray:
    """Returns of ``n`` fresh participants who follow ``regime`` (sampled if stochastic)."""
    g = as_generator(rng)
    x0 = g.standard_normal(n)
    a_prev = np.zeros(n)
    blocks: list[np.ndarray] = []
    total = np.zeros(n)
    for t in range(spec.n_stages):
        r = np.zeros(n) if t == 0 else (
            x0 + spec.response_noise * g.standard_normal(n) > spec.response_threshold
        ).astype(float)
        blocks.append(np.column_stack([x0, r]))
        H = np.hstack(blocks)
        a = regime.sample(t, H, g) if regime.rule(t).kind != "deterministic" else regime.actions(t, H)
        y = spec.mean_reward(t, x0, r, a_prev, a) + spec.sigma * g.standard_normal(n)
        total += gamma**t * y
        blocks.extend([a[:, None].astype(float), y[:, None]])
        a_prev = a.astype(float)
    return total


# --------------------------------------------------------------------------
# single-stage observational design


@dataclass(frozen=True)
class ObservationalSpec:
    """``X ~ N(0, I_2)``, ``P(A=1|X) = expit(g0 + g1 x1)``,
    ``Y = 1 + x1 + q x1^2 + A (psi0 + psi1 x1) + sigma e``.

    The quadratic term is what a linear outcome model misses; an
    intercept-only propensity model misses the confounding through ``x1``.
    """

    propensity: tuple = (-0.3, 1.0)
    quad: float = 1.0
    psi: tuple = (0.5, 1.0)
    sigma: float = 1.0

    def value(self, regime_threshold: float = 0.0) -> float:
        """True value of ``d(x) = 1{x1 > regime_threshold}``."""
        c = regime_threshold
        p = 1.0 - stats.norm.cdf(c)
        return 1.0 + self.quad + self.psi[0] * p + self.psi[1] * stats.norm.pdf(c)

    def mean(self, X: np.ndarray, a) -> np.ndarray:
        x1 = X[:, 0]
        return 1.0 + x1 + self.quad * x1**2 + np.asarray(a) * (self.psi[0] + self.psi[1] * x1)


def observational_generate(spec: ObservationalSpec, n: int, rng) -> Dataset:
    g = as_generator(rng)
    X = g.standard_normal((n, 2))
    p1 = _expit(spec.propensity[0] + spec.propensity[1] * X[:, 0])
    a = (g.random(n) < p1).astype(np.int64)
    y = spec.mean(X, a) + spec.sigma * g.standard_normal(n)
    return Dataset.from_stage_arrays([X], [a], [y], [np.where(a == 1, p1, 1 - p1)], n_actions=2,
                                     metadata={"env": "observational"})


# --------------------------------------------------------------------------
# contextual bandits

BASELINES = ("zero", "sinusoidal", "drift", "adversarial")


@dataclass(frozen=True)
class BanditEnvSpec:
    """Linear contextual bandit ``E[Y | x, a] = f(x, a)' mu + g_t(x)``.

    ``feature_kind="per_arm"`` draws an independent ``N(feature_offset, I_p)``
    vector for every arm (``d = p``); ``"shared"`` draws one context and uses
    ``f(x, a) = e_a (x) x`` (``d = K p``). The control arm, if any, has the zero
    feature vector, so its mean is the baseline alone. With ``habituation`` the
    capped, scaled days since each arm was last sent is appended to its
    feature vector with true coefficient ``habituation_coef``.
    """

    n_arms: int = 5
    context_dim: int = 5
    mu: tuple | None = None
    noise: float = 1.0
    feature_kind: str = "per_arm"
    feature_offset: float = 0.0
    stationary: bool = True
    baseline: str = "zero"
    baseline_scale: float = 1.0
    baseline_offset: float = 0.0
    baseline_period: float = 50.0
    habituation: bool = False
    habituation_coef: float = 0.5
    habituation_cap: int = 7
    missing_prob: float = 0.0
    availability_prob: float = 1.0
    control_arm: int | None = None
    mu_seed: int = 12345

    def __post_init__(self):
        if self.feature_kind not in ("per_arm", "shared"):
            raise ValidationError("feature_kind must be 'per_arm' or 'shared'")
        if self.baseline not in BASELINES:
            raise ValidationError(f"baseline must be one of {BASELINES}")
        if self.stationary and self.baseline != "zero":
            raise ValidationError("a stationary environment has no baseline drift (baseline must be 'zero')")
        if self.n_arms < 2:
            raise ValidationError("need at least two arms")
        if not 0.0 <= self.missing_prob < 1.0:
            raise ValidationError("missing_prob must lie in [0, 1)")
        if self.control_arm is not None and not 0 <= self.control_arm < self.n_arms:
            raise ValidationError("control_arm outside the arm range")
        mu = self.mu
        if mu is None:
            v = np.random.default_rng(self.mu_seed).standard_normal(self.base_dim)
            mu = tuple(float(x) for x in v / np.linalg.norm(v))
        if len(mu) != self.base_dim:
            raise ValidationError(f"mu needs {self.base_dim} entries")
        object.__setattr__(self, "mu", tuple(float(x) for x in mu))

    @property
    def base_dim(self) -> int:
        return self.context_dim if self.feature_kind == "per_arm" else self.context_dim * self.n_arms

    @property
    def feature_dim(self) -> int:
        return self.base_dim + (1 if self.habituation else 0)

    @property
    def theta(self) -> np.ndarray:
        extra = [self.habituation_coef] if self.habituation else []
        return np.array(list(self.mu) + extra)


@dataclass
class ArmContext:
    """What an agent sees at one decision point."""

    features: np.ndarray
    available: np.ndarray
    means: np.ndarray
    context: np.ndarray
    t: int

    @property
    def optimal_mean(self) -> float:
        return float(self.means[self.available].max())

    def regret(self, arm: int) -> float:
        return self.optimal_mean - float(self.means[arm])


class BanditEnv:
    """Stateful simulator; one instance per seed."""

    def __init__(self, spec: BanditEnvSpec, rng):
        self.spec = spec
        self.rng = as_generator(rng)
        self.t = 0
        self.days_since = np.full(spec.n_arms, spec.habituation_cap, dtype=float)
        self.drift = 0.0
        self._current: ArmContext | None = None

    def features(self, context: np.ndarray, days_since: np.ndarray | None = None) -> np.ndarray:
        s = self.spec
        K = s.n_arms
        if s.feature_kind == "per_arm":
            F = context.copy()
        else:
            F = np.zeros((K, s.base_dim))
            for a in range(K):
                F[a, a * s.context_dim : (a + 1) * s.context_dim] = context
        if s.habituation:
            ds = self.days_since if days_since is None else days_since
            F = np.hstack([F, (np.minimum(ds, s.habituation_cap) / s.habituation_cap)[:, None]])
        if s.control_arm is not None:
            F[s.control_arm] = 0.0
        return F

    def baseline_value(self, context: np.ndarray) -> float:
        s = self.spec
        if s.baseline == "zero":
            return 0.0
        if s.baseline == "sinusoidal":
            g = s.baseline_scale * np.sin(2 * np.pi * self.t / s.baseline_period)
        elif s.baseline == "drift":
            g = self.drift
        else:
            g = s.baseline_scale * float(np.mean(np.atleast_2d(context)[:, 0]))
        return float(g + s.baseline_offset)

    def observe(self) -> ArmContext:
        s = self.spec
        if s.feature_kind == "per_arm":
            ctx = s.feature_offset + self.rng.standard_normal((s.n_arms, s.context_dim))
        else:
            ctx = s.feature_offset + self.rng.standard_normal(s.context_dim)
        F = self.features(ctx)
        avail = np.ones(s.n_arms, dtype=bool)
        if s.availability_prob < 1.0 and s.control_arm is not None and self.rng.random() >= s.availability_prob:
            avail[:] = False
            avail[s.control_arm] = True
        means = F @ s.theta + self.baseline_value(ctx)
        self._current = ArmContext(F, avail, means, ctx, self.t)
        return self._current

    def pull(self, arm: int) -> float:
        """Realized reward for ``arm`` at the current context (NaN if missing); advances time."""
        s = self.spec
        if self._current is None:
            raise ValidationError("call observe() before pull()")
        if not 0 <= arm < s.n_arms:
            raise IndexOutOfRange(f"arm {arm} outside 0..{s.n_arms - 1}")
        y = float(self._current.means[arm] + s.noise * self.rng.standard_normal())
        if s.missing_prob > 0 and self.rng.random() < s.missing_prob:
            y = float("nan")
        self.days_since += 1.0
        self.days_since[arm] = 0.0
        if s.baseline == "drift":
            self.drift = float(np.clip(self.drift + 0.1 * s.baseline_scale * self.rng.standard_normal(),
                                       -s.baseline_scale, s.baseline_scale))
        self.t += 1
        self._current = None
        return y


def bandit_env_step(env: BanditEnv, arm: int) -> tuple[float, ArmContext]:
    """Pull ``arm`` at the pending context, then reveal the next context."""
    y = env.pull(arm)
    return y, env.observe()


# --------------------------------------------------------------------------
# finite MDP


@dataclass(frozen=True)
class MdpSpec:
    """``transitions[s, a, s']``, expected ``rewards[s, a]``; state ``absorbing``
    is self-absorbing with zero reward. Realized rewards add ``N(0, reward_noise^2)``."""

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float = 0.9
    absorbing: int = -1
    reward_noise: float = 0.0
    initial: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        R = np.asarray(self.rewards, dtype=float)
        S, K = R.shape
        if P.shape != (S, K, S):
            raise ValidationError("transitions must have shape (S, K, S)")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-12):
            raise ValidationError("transition rows must be probability vectors")
        c = self.absorbing % S
        if not np.allclose(P[c, :, c], 1.0) or np.any(R[c] != 0.0):
            raise ValidationError("absorbing state must be self-absorbing with zero reward")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError("gamma must lie in [0, 1)")
        init = np.full(S, 0.0) if self.initial is None else np.asarray(self.initial, dtype=float)
        if self.initial is None:
            init[[s for s in range(S) if s != c]] = 1.0 / (S - 1)
        if not np.isclose(init.sum(), 1.0):
            raise ValidationError("initial distribution must sum to one")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)
        object.__setattr__(self, "absorbing", c)
        object.__setattr__(self, "initial", init)

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


def standard_mdp(gamma: float = 0.9) -> MdpSpec:
    """Three live states and one absorbing state, two actions, deterministic dynamics.

    The optimal policy cycles through states for a while before cashing out,
    so it is not greedy in the immediate reward.
    """
    S, K, c = 4, 2, 3
    P = np.zeros((S, K, S))
    R = np.zeros((S, K))
    nxt = {(0, 0): 1, (0, 1): 2, (1, 0): 2, (1, 1): c, (2, 0): 0, (2, 1): c}
    rew = {(0, 0): 0.0, (0, 1): 0.6, (1, 0): 0.3, (1, 1): 1.0, (2, 0): 0.5, (2, 1): 2.0}
    for (s, a), s2 in nxt.items():
        P[s, a, s2] = 1.0
        R[s, a] = rew[(s, a)]
    P[c, :, c] = 1.0
    return MdpSpec(P, R, gamma=gamma, absorbing=c)


def value_iteration(spec: MdpSpec, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Optimal Q-table with ``Q(c, .) = 0``."""
    Q = np.zeros_like(spec.rewards)
    c = spec.absorbing
    for _ in range(max_iter):
        V = Q.max(axis=1)
        V[c] = 0.0
        Qn = spec.rewards + spec.gamma * spec.transitions @ V
        Qn[c] = 0.0
        if np.max(np.abs(Qn - Q)) < tol:
            return Qn
        Q = Qn
    return Q


def policy_evaluation(spec: MdpSpec, policy: np.ndarray) -> np.ndarray:
    """Exact ``V^pi`` from the linear Bellman equations; ``policy[s, a]`` are probabilities."""
    pi = np.asarray(policy, dtype=float)
    S = spec.n_states
    P_pi = np.einsum("sa,sat->st", pi, spec.transitions)
    r_pi = np.einsum("sa,sa->s", pi, spec.rewards)
    A = np.eye(S) - spec.gamma * P_pi
    c = spec.absorbing
    A[c] = 0.0
    A[c, c] = 1.0
    r_pi = r_pi.copy()
    r_pi[c] = 0.0
    return np.linalg.solve(A, r_pi)


def policy_table(policy, spec: MdpSpec) -> np.ndarray:
    """Probability table ``(S, K)`` from a table, a stationary regime or a deterministic action array."""
    if isinstance(policy, Regime):
        X = np.arange(spec.n_states, dtype=float)[:, None]
        return policy.probs(0, X)
    pi = np.asarray(policy, dtype=float)
    if pi.ndim == 1:
        out = np.zeros((spec.n_states, spec.n_actions))
        out[np.arange(spec.n_states), pi.astype(int)] = 1.0
        return out
    return pi


@dataclass
class RolloutResult:
    dataset: Dataset | None
    returns: np.ndarray
    censored: np.ndarray
    n_empty: int


def mdp_env_rollout(
    spec: MdpSpec, policy, n_paths: int, rng, cap: int = 1000, start_states: np.ndarray | None = None
) -> RolloutResult:
    """Simulate ``n_paths`` paths until absorption or ``cap`` decisions (censored).

    Paths that start in the absorbing state have no decisions; they count in
    ``returns`` (as zero) but are left out of the dataset.
    """
    g = as_generator(rng)
    pi = policy_table(policy, spec)
    S, K, c = spec.n_states, spec.n_actions, spec.absorbing
    s = g.choice(S, size=n_paths, p=spec.initial) if start_states is None else np.asarray(start_states, int)
    alive = s != c
    cum_P = np.cumsum(spec.transitions, axis=2)
    cum_pi = np.cumsum(pi, axis=1)
    rec_s, rec_a, rec_r, rec_p, rec_path, rec_t = [], [], [], [], [], []
    returns = np.zeros(n_paths)
    disc = np.ones(n_paths)
    steps = np.zeros(n_paths, dtype=np.int64)
    for t in range(cap):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        st = s[idx]
        a = np.minimum((cum_pi[st] < g.random(idx.size)[:, None]).sum(axis=1), K - 1)
        r = spec.rewards[st, a] + (spec.reward_noise * g.standard_normal(idx.size) if spec.reward_noise else 0.0)
        s2 = np.minimum((cum_P[st, a] < g.random(idx.size)[:, None]).sum(axis=1), S - 1)
        rec_s.append(st); rec_a.append(a); rec_r.append(r); rec_p.append(pi[st, a])
        rec_path.append(idx); rec_t.append(np.full(idx.size, t))
        returns[idx] += disc[idx] * r
        disc[idx] *= spec.gamma
        steps[idx] += 1
        s[idx] = s2
        alive[idx] = s2 != c
    censored = alive.copy()
    n_empty = int(np.sum(steps == 0))
    if not rec_s:
        return RolloutResult(None, returns, censored, n_empty)
    path = np.concatenate(rec_path)
    tt = np.concatenate(rec_t)
    order = np.lexsort((tt, path))
    kept = np.flatnonzero(steps > 0)
    remap = np.full(n_paths, -1)
    remap[kept] = np.arange(kept.size)
    data = Dataset(
        traj_index=remap[path[order]],
        states=np.concatenate(rec_s)[order].astype(float)[:, None],
        actions=np.concatenate(rec_a)[order],
        rewards=np.concatenate(rec_r)[order].astype(float),
        behavior_prob=np.concatenate(rec_p)[order].astype(float),
        available=np.ones(order.size, dtype=bool),
        terminal_states=s[kept].astype(float)[:, None],
        horizon=None,
        n_actions=(K,),
        metadata={"env": "mdp", "censored": censored[kept].tolist(), "absorbing_state": c},
    )
    return RolloutResult(data, returns, censored, n_empty)


# --------------------------------------------------------------------------
# missing rewards


@dataclass(frozen=True)
class LocfResult:
    dataset: Dataset
    imputed: np.ndarray
    leading_missing: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def apply_locf(data: Dataset) -> LocfResult:
    """Carry the last observed reward forward within each trajectory.

    Rewards missing before any observation become 0 and are flagged in
    ``leading_missing``. ``imputed`` marks every replaced row.
    """
    r = data.rewards.copy()
    miss = np.isnan(r)
    leading = np.zeros(data.n_rows, dtype=bool)
    if not miss.any():
        return LocfResult(data, miss, leading)
    offs = data.offsets
    for i in range(data.n_trajectories):
        last = None
        for j in range(offs[i], offs[i + 1]):
            if miss[j]:
                if last is None:
                    r[j] = 0.0
                    leading[j] = True
                else:
                    r[j] = last
            else:
                last = r[j]
    meta = dict(data.metadata, missing_policy="locf", n_imputed=int(miss.sum()))
    return LocfResult(data.replace(rewards=r, metadata=meta), miss, leading)


def drop_incomplete(data: Dataset) -> Dataset:
    """Complete-case alternative to LOCF: drop trajectories with any missing reward."""
    bad = np.zeros(data.n_trajectories, dtype=bool)
    bad[data.traj_index[np.isnan(data.rewards)]] = True
    out = data.subset(np.flatnonzero(~bad))
    return out.replace(metadata=dict(out.metadata, missing_policy="drop", n_dropped=int(bad.sum())))


# --------------------------------------------------------------------------
# separable multistage design for outcome weighted learning


@dataclass(frozen=True)
class SeparableSpec:
    """Independent ``x_t ~ N(0, 1)``, fair coin actions, and stage rewards
    ``Y_{t+1} = base + 1{A_t = 1{x_t > 0}} + noise * U(0, 1)``.

    Rewards are non-negative and the optimal rule at every stage is
    ``1{x_t > 0}``.
    """

    n_stages: int = 2
    base: float = 0.25
    noise: float = 0.0
    prob: float = 0.5

    def oracle_regime(self) -> Regime:
        rules = tuple(
            DecisionRule("deterministic", np.array([0.0, 0.0, 1.0]),
                         FeatureMap("linear_interaction", (), (f"X{t}_0",)), 2)
            for t in range(self.n_stages)
        )
        return Regime(rules, 1, provenance={"method": "oracle", "env": "separable"})

    def optimal_value(self) -> float:
        return self.n_stages * (self.base + 1.0 + 0.5 * self.noise)


def separable_generate(spec: SeparableSpec, n: int, rng) -> Dataset:
    g = as_generator(rng)
    states, actions, rewards, probs = [], [], [], []
    for _ in range(spec.n_stages):
        x = g.standard_normal(n)
        a = (g.random(n) < spec.prob).astype(np.int64)
        y = spec.base + (a == (x > 0)).astype(float) + spec.noise * g.random(n)
        states.append(x[:, None]); actions.append(a); rewards.append(y)
        probs.append(np.where(a == 1, spec.prob, 1 - spec.prob))
    return Dataset.from_stage_arrays(states, actions, rewards, probs, n_actions=2, metadata={"env": "separable"})
