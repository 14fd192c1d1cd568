"""Experiment harness: regret curves, Monte-Carlo values, regime agreement and
double-robustness grids."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bandits import Agent, make_agent
from .core import Dataset, FeatureMap, Regime, RngSpec, as_generator
from .envs import (
    BanditEnv,
    BanditEnvSpec,
    MdpSpec,
    ObservationalSpec,
    SmartSpec,
    mdp_env_rollout,
    observational_generate,
    smart_rollout_returns,
)
from .errors import ValidationError
from .offline.gestimation import g_estimation_fit
from .offline.models import OutcomeModel, PropensityModel
from .offline.value import ValueEstimate, value_aiptw, value_plugin

# --------------------------------------------------------------------------
# regret


@dataclass(frozen=True)
class RegretCurve:
    """Cumulative conditional regret; ``per_seed`` has one row per seed."""

    per_seed: np.ndarray
    seeds: tuple[int, ...]
    agent: str
    env: str

    @property
    def mean(self) -> np.ndarray:
        return self.per_seed.mean(axis=0)

    @property
    def std_error(self) -> np.ndarray:
        n = self.per_seed.shape[0]
        if n < 2:
            return np.zeros(self.per_seed.shape[1])
        return self.per_seed.std(axis=0, ddof=1) / np.sqrt(n)

    def at(self, t: int) -> float:
        """Mean cumulative regret after ``t`` decisions."""
        return float(self.mean[t - 1])

    def to_csv(self, every: int = 1, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "mean", "std_error", *[f"seed_{s}" for s in self.seeds]])
        m, se = self.mean, self.std_error
        T = self.per_seed.shape[1]
        steps = sorted(set(range(every - 1, T, every)) | {T - 1})
        for i in steps:
            w.writerow([i + 1, repr(float(m[i])), repr(float(se[i])), *[repr(float(v)) for v in self.per_seed[:, i]]])
        return buf.getvalue()


AgentFactory = Callable[[RngSpec], Agent]


def agent_factory(name: str, spec: BanditEnvSpec, **params) -> AgentFactory:
    """Factory for a registered agent sized to ``spec``."""
    make_agent(name, spec.feature_dim, spec.n_arms, 0, **params)
    return lambda rng: make_agent(name, spec.feature_dim, spec.n_arms, rng, **params)


def run_bandit(agent: Agent, env: BanditEnv, T: int, log=None) -> np.ndarray:
    """Run ``T`` decisions; returns the per-step conditional regret."""
    out = np.empty(T)
    for t in range(T):
        ctx = env.observe()
        dec = agent.step(ctx)
        out[t] = ctx.regret(dec.action)
        y = env.pull(dec.action)
        agent.absorb(ctx, dec, y)
        if log is not None:
            log.record(t, ctx, dec, y)
    return out


def regret_curve(
    agent: str | AgentFactory, env_spec: BanditEnvSpec, T: int, seeds, agent_params: dict | None = None
) -> RegretCurve:
    """Cumulative regret over seeds. Seed ``s`` drives the environment with
    ``RngSpec(s, 0)`` and the agent with ``RngSpec(s, 1)``."""
    seeds = tuple(int(s) for s in seeds)
    if T < 1 or not seeds:
        raise ValidationError("need T >= 1 and at least one seed")
    if isinstance(agent, str):
        name, factory = agent, agent_factory(agent, env_spec, **(agent_params or {}))
    else:
        name, factory = getattr(agent, "__name__", "custom"), agent
    rows = np.empty((len(seeds), T))
    for i, s in enumerate(seeds):
        env = BanditEnv(env_spec, RngSpec(s, 0))
        rows[i] = np.cumsum(run_bandit(factory(RngSpec(s, 1)), env, T))
    return RegretCurve(rows, seeds, name, "bandit")


# --------------------------------------------------------------------------
# Monte-Carlo policy value


def mc_policy_value(env, regime, n_rollouts: int, gamma: float = 1.0, rng=0, cap: int = 1000) -> ValueEstimate:
    """Mean discounted return of fresh rollouts under ``regime`` with its standard error.

    ``env`` is a :class:`SmartSpec` (regime over stages), an
    :class:`ObservationalSpec` (single-stage regime) or an :class:`MdpSpec`
    (stationary regime, probability table or action array).
    """
    if n_rollouts < 2:
        raise ValidationError("need at least two rollouts")
    g = as_generator(rng)
    if isinstance(env, SmartSpec):
        R = smart_rollout_returns(env, regime, n_rollouts, g, gamma)
    elif isinstance(env, ObservationalSpec):
        X = g.standard_normal((n_rollouts, 2))
        a = regime.actions(0, X)
        R = env.mean(X, a) + env.sigma * g.standard_normal(n_rollouts)
    elif isinstance(env, MdpSpec):
        R = mdp_env_rollout(env, regime, n_rollouts, g, cap=cap).returns
    else:
        raise ValidationError(f"unsupported environment {type(env).__name__}")
    se = 0.0 if np.ptp(R) == 0 else float(np.std(R, ddof=1) / np.sqrt(R.size))
    return ValueEstimate(float(np.mean(R)), se, 1.0, 0, None, {"estimator": "monte_carlo", "n": int(R.size)})


# --------------------------------------------------------------------------
# regime agreement


def regime_agreement(regime: Regime, oracle: Regime, contexts, t: int | None = None) -> float:
    """Fraction of decisions where both regimes choose the same action.

    ``contexts`` is a :class:`Dataset` (all stages pooled, or stage ``t``) or
    an array of histories at stage ``t`` (default 0).
    """
    if isinstance(contexts, Dataset):
        stages = range(contexts.horizon + 1) if t is None else [t]
        hits = total = 0
        for s in stages:
            H = contexts.histories(s)
            hits += int(np.sum(regime.actions(s, H) == oracle.actions(s, H)))
            total += H.shape[0]
        return hits / total
    H = np.atleast_2d(np.asarray(contexts, dtype=float))
    s = 0 if t is None else t
    return float(np.mean(regime.actions(s, H) == oracle.actions(s, H)))


# --------------------------------------------------------------------------
# double-robustness grid

CELLS = (("correct", "correct"), ("correct", "wrong"), ("wrong", "correct"), ("wrong", "wrong"))


def dr_models(spec: ObservationalSpec | None = None) -> dict:
    """Correct and deliberately misspecified working models for :class:`ObservationalSpec`."""
    return {
        "propensity": {
            "correct": PropensityModel("logistic", FeatureMap("linear", ("X0_0",))),
            "wrong": PropensityModel("constant"),
        },
        "outcome": {
            "correct": OutcomeModel(FeatureMap("polynomial", ("X0_0",), ("X0_0",), degree=2)),
            "wrong": OutcomeModel(FeatureMap("linear_interaction", ("X0_0",), ("X0_0",))),
        },
        "adjunct": {
            "correct": FeatureMap("polynomial", ("X0_0",), degree=2),
            "wrong": FeatureMap("linear", ("X0_1",)),
        },
        "contrast": FeatureMap("linear_interaction", ("X0_0",), ("X0_0",)),
    }


def _threshold_regime() -> Regime:
    from .core import DecisionRule

    rule = DecisionRule("deterministic", np.array([0.0, 0.0, 1.0]),
                        FeatureMap("linear_interaction", (), ("X0_0",)), 2)
    return Regime((rule,), 2, provenance={"method": "oracle", "env": "observational"})


@dataclass(frozen=True)
class BiasTable:
    """Mean signed error (largest component for vector targets) per
    (outcome, propensity) cell, plus the plug-in comparator by outcome model."""

    estimator: str
    bias: dict
    sd: dict
    plugin_bias: dict
    n: int
    replications: int
    seed: int
    truth: list
    raw: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        key = lambda c: f"outcome={c[0]},propensity={c[1]}"  # noqa: E731
        return {
            "estimator": self.estimator, "n": self.n, "replications": self.replications, "seed": self.seed,
            "truth": self.truth,
            "bias": {key(c): v for c, v in self.bias.items()},
            "sd": {key(c): v for c, v in self.sd.items()},
            "plugin_bias": {f"outcome={k}": v for k, v in self.plugin_bias.items()},
        }

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "outcome", "propensity", "bias", "sd"])
        for c in CELLS:
            w.writerow([self.estimator, c[0], c[1], repr(self.bias[c]), repr(self.sd[c])])
        for k, v in self.plugin_bias.items():
            w.writerow(["plugin", k, "", repr(v), ""])
        return buf.getvalue()


def _bias(errors: np.ndarray) -> float:
    e = np.atleast_2d(np.asarray(errors, dtype=float).T).T
    return float(np.max(np.abs(e.mean(axis=0))))


def dr_experiment(
    estimator: str,
    spec: ObservationalSpec | None = None,
    n: int = 10_000,
    replications: int = 200,
    seed: int = 0,
) -> BiasTable:
    """2x2 misspecification grid for ``estimator`` in {"aiptw", "g_estimation"}.

    AIPTW targets the value of ``1{x1 > 0}``; G-estimation targets the
    contrast coefficients. The outcome axis is the outcome model (AIPTW) or
    the adjunct model (G-estimation). The plug-in outcome-regression value is
    computed on the same replications.
    """
    if estimator not in ("aiptw", "g_estimation"):
        raise ValidationError("estimator must be 'aiptw' or 'g_estimation'")
    if replications < 2 or n < 10:
        raise ValidationError("need at least two replications of at least ten subjects")
    spec = spec or ObservationalSpec()
    models = dr_models(spec)
    regime = _threshold_regime()
    truth = [spec.value(0.0)] if estimator == "aiptw" else list(spec.psi)
    errs = {c: [] for c in CELLS}
    plug = {"correct": [], "wrong": []}
    root = np.random.SeedSequence(seed)
    for child in root.spawn(replications):
        data = observational_generate(spec, n, np.random.default_rng(child))
        for out_kind, prop_kind in CELLS:
            pm = models["propensity"][prop_kind]
            if estimator == "aiptw":
                est = value_aiptw(data, regime, pm, models["outcome"][out_kind], n_boot=0).point
                errs[(out_kind, prop_kind)].append([est - truth[0]])
            else:
                res = g_estimation_fit(data, models["contrast"], pm, models["adjunct"][out_kind])
                errs[(out_kind, prop_kind)].append(res.model.psi[0] - np.asarray(truth))
        for k in plug:
            plug[k].append([value_plugin(data, regime, models["outcome"][k]).point - spec.value(0.0)])
    bias = {c: _bias(np.array(v)) for c, v in errs.items()}
    sd = {c: float(np.max(np.std(np.array(v), axis=0, ddof=1))) for c, v in errs.items()}
    plugin_bias = {k: _bias(np.array(v)) for k, v in plug.items()}
    raw = {c: np.array(v) for c, v in errs.items()}
    return BiasTable(estimator, bias, sd, plugin_bias, n, replications, seed, truth, raw)
