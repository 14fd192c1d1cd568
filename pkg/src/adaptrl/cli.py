"""Command-line entry point: ``adaptrl <simulate|fit|evaluate|regret|dr> CONFIG``.

Exit codes: 0 success, 2 invalid configuration, 3 runtime (modelling) error.
Outputs are written under ``--out`` with the config hash in every file name
and in every file's header or ``config_hash`` field. No wall-clock data is
written, so identical (config, seed) pairs give byte-identical files.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bandits import InteractionLog, make_agent
from .config import DR_METHODS, OFFLINE_METHODS, VALUE_METHODS, ExperimentConfig, load_config
from .core import Dataset, FeatureMap, MarkovFeature, Regime, RngSpec, dataset_from_csv, dataset_to_csv
from .envs import (
    BanditEnv,
    BanditEnvSpec,
    ObservationalSpec,
    SeparableSpec,
    SmartSpec,
    mdp_env_rollout,
    observational_generate,
    separable_generate,
    smart_generate,
    standard_mdp,
)
from .errors import AdaptRLError, ConfigInvalid
from .evaluation import (
    RegretCurve,
    _threshold_regime,
    dr_experiment,
    dr_models,
    mc_policy_value,
    regime_agreement,
    run_bandit,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    if isinstance(v, dict):
        return {k: _tuplify(x) for k, x in v.items()}
    return v


def build_env(cfg: ExperimentConfig):
    params = _tuplify(dict(cfg.env.params))
    try:
        if cfg.env.kind == "smart":
            return SmartSpec(**params)
        if cfg.env.kind == "observational":
            return ObservationalSpec(**params)
        if cfg.env.kind == "separable":
            return SeparableSpec(**params)
        if cfg.env.kind == "mdp":
            return standard_mdp(**params)
        return BanditEnvSpec(**params)
    except (TypeError, AdaptRLError) as exc:
        raise ConfigInvalid(f"env.params: {exc}") from exc


def oracle_of(env) -> Regime | None:
    if isinstance(env, (SmartSpec, SeparableSpec)):
        return env.oracle_regime()
    if isinstance(env, ObservationalSpec):
        return _threshold_regime()
    return None


def simulate_dataset(env, n: int, seed: int) -> Dataset:
    rng = RngSpec(seed, 0)
    if isinstance(env, SmartSpec):
        return smart_generate(env, n, rng).dataset
    if isinstance(env, ObservationalSpec):
        return observational_generate(env, n, rng)
    if isinstance(env, SeparableSpec):
        return separable_generate(env, n, rng)
    uniform = np.full((env.n_states, env.n_actions), 1.0 / env.n_actions)
    return mdp_env_rollout(env, uniform, n, rng).dataset


def _load_data(cfg: ExperimentConfig, env) -> Dataset:
    if cfg.data:
        p = Path(cfg.data)
        if not p.exists():
            raise ConfigInvalid(f"data: file {p} does not exist")
        horizon = None if cfg.env.kind == "mdp" else "infer"
        return dataset_from_csv(p, horizon=horizon)
    return simulate_dataset(env, cfg.eval.n, cfg.seed)


def _markov_feature(env) -> MarkovFeature:
    return MarkovFeature("tabular", env.n_states, env.n_actions, absorbing_state=float(env.absorbing))


class Outputs:
    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg, self.dir, self.hash = cfg, out, cfg.hash()
        self.files: list[Path] = []

    def header(self) -> str:
        return f"config_hash: {self.hash}\nadaptrl {__version__}"

    def write(self, stem: str, ext: str, text: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / f"{stem}-{self.hash}.{ext}"
        p.write_text(text, encoding="utf-8")
        self.files.append(p)
        return p

    def write_json(self, stem: str, payload: dict) -> Path:
        body = {"config_hash": self.hash, "version": __version__, **payload}
        return self.write(stem, "json", json.dumps(body, sort_keys=True, indent=2, default=_json_default) + "\n")

    def write_config(self) -> Path:
        return self.write_json("config", {"config": self.cfg.resolved()})


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: ExperimentConfig, out: Outputs) -> None:
    env = build_env(cfg)
    if isinstance(env, BanditEnvSpec):
        m = cfg.method
        name, params = (m.name, dict(m.params)) if m else ("uniform", {})
        agent = make_agent(name, env.feature_dim, env.n_arms, RngSpec(cfg.seed, 1), **params)
        log = InteractionLog()
        run_bandit(agent, BanditEnv(env, RngSpec(cfg.seed, 0)), cfg.eval.T, log)
        out.write("interactions", "csv", log.to_csv(out.header()))
        return
    data = simulate_dataset(env, cfg.eval.n, cfg.seed)
    out.write("dataset", "csv", dataset_to_csv(data, header_comment=out.header()))
    oracle = oracle_of(env)
    if oracle is not None:
        out.write_json("oracle", {"regime": oracle.to_dict()})


def _require_method(cfg: ExperimentConfig, allowed) -> tuple[str, dict]:
    if cfg.method is None or cfg.method.name not in allowed:
        got = None if cfg.method is None else cfg.method.name
        raise ConfigInvalid(f"method.name: expected one of {list(allowed)}, got {got!r}")
    return cfg.method.name, dict(cfg.method.params)


def fit_regime(name: str, params: dict, data: Dataset, env, gamma: float) -> tuple[Regime, dict]:
    from .indefinite import ggq_fit, vlearning_fit
    from .offline import bowl_fit, g_estimation_fit, owl_fit, q_learning_fit

    maps = env.stage_feature_maps() if isinstance(env, SmartSpec) else None
    try:
        if name == "q_learning":
            res = q_learning_fit(data, maps, gamma=gamma, **params)
            return res.regime, {"coefficients": [c.tolist() for c in res.model.coefs]}
        if name == "g_estimation":
            res = g_estimation_fit(data, maps, gamma=gamma, **params)
            return res.regime, {"psi": [p.tolist() for p in res.model.psi]}
        if name == "bowl":
            res = bowl_fit(data, **params)
            return res.regime, {"coefficients": [s.coef.tolist() for s in res.stages],
                                "degenerate": [s.degenerate for s in res.stages]}
        if name == "owl":
            res, regime = owl_fit(data, **params)
            return regime, {"coefficients": res.coef.tolist(), "degenerate": res.degenerate}
        feat = _markov_feature(env)
        g = env.gamma
        if name == "ggq":
            sol = ggq_fit(data, feat, gamma=g, **params)
            return sol.regime, {"theta": sol.theta.tolist(), "objective": sol.objective_value,
                                "non_unique": sol.non_unique, "converged": sol.converged}
        sol = vlearning_fit(data, feat, gamma=g, **params)
        return sol.regime, {"theta": sol.theta.tolist(), "value": sol.value}
    except TypeError as exc:
        raise ConfigInvalid(f"method.params: {exc}") from exc


def cmd_fit(cfg: ExperimentConfig, out: Outputs) -> None:
    name, params = _require_method(cfg, OFFLINE_METHODS)
    env = build_env(cfg)
    if name in ("ggq", "vlearning") and cfg.env.kind != "mdp":
        raise ConfigInvalid("method.name: indefinite-horizon methods need env.kind 'mdp'")
    if name not in ("ggq", "vlearning") and cfg.env.kind in ("mdp", "bandit"):
        raise ConfigInvalid(f"method.name: {name} needs a finite-horizon env")
    data = _load_data(cfg, env)
    regime, details = fit_regime(name, params, data, env, cfg.eval.gamma)
    report = {"method": name, "params": params, "n_trajectories": data.n_trajectories, "details": details}
    oracle = oracle_of(env)
    if oracle is not None:
        report["agreement_with_oracle"] = regime_agreement(regime, oracle, data)
    out.write_json("regime", {"regime": regime.to_dict()})
    out.write_json("fit", report)


def cmd_evaluate(cfg: ExperimentConfig, out: Outputs) -> None:
    from .offline import value_aiptw, value_iptw, value_plugin

    name, params = _require_method(cfg, VALUE_METHODS)
    env = build_env(cfg)
    if cfg.regime:
        p = Path(cfg.regime)
        if not p.exists():
            raise ConfigInvalid(f"regime: file {p} does not exist")
        doc = json.loads(p.read_text(encoding="utf-8"))
        regime = Regime.from_dict(doc.get("regime", doc))
    else:
        regime = oracle_of(env)
        if regime is None:
            raise ConfigInvalid("regime: a regime file is required for this env")
    report: dict = {"method": name}
    if name == "monte_carlo":
        est = mc_policy_value(env, regime, cfg.eval.rollouts, cfg.eval.gamma, RngSpec(cfg.seed, 2))
    else:
        data = _load_data(cfg, env)
        if name == "iptw":
            est = value_iptw(data, regime, gamma=cfg.eval.gamma, n_boot=cfg.eval.n_boot, seed=cfg.seed, **params)
        else:
            if not isinstance(env, ObservationalSpec):
                raise ConfigInvalid("method.name: aiptw and plugin are configured for env.kind 'observational'")
            m = dr_models(env)
            which = params.get("models", "correct")
            if which not in ("correct", "wrong"):
                raise ConfigInvalid("method.params.models must be 'correct' or 'wrong'")
            if name == "aiptw":
                est = value_aiptw(data, regime, m["propensity"][which], m["outcome"][which],
                                  n_boot=cfg.eval.n_boot, seed=cfg.seed)
            else:
                est = value_plugin(data, regime, m["outcome"][which], n_boot=cfg.eval.n_boot, seed=cfg.seed)
        report["n_trajectories"] = data.n_trajectories
    report["estimate"] = est.to_dict()
    out.write_json("value", report)


def _regret_worker(args) -> np.ndarray:
    name, spec, params, seed, T = args
    agent = make_agent(name, spec.feature_dim, spec.n_arms, RngSpec(seed, 1), **params)
    return np.cumsum(run_bandit(agent, BanditEnv(spec, RngSpec(seed, 0)), T))


def cmd_regret(cfg: ExperimentConfig, out: Outputs, threads: int = 1) -> None:
    if cfg.method is None:
        raise ConfigInvalid("method: an agent name is required")
    env = build_env(cfg)
    if not isinstance(env, BanditEnvSpec):
        raise ConfigInvalid("env.kind: regret needs a bandit env")
    name, params = cfg.method.name, dict(cfg.method.params)
    try:
        make_agent(name, env.feature_dim, env.n_arms, 0, **params)
    except TypeError as exc:
        raise ConfigInvalid(f"method.params: {exc}") from exc
    except AdaptRLError as exc:
        raise ConfigInvalid(f"method: {exc}") from exc
    jobs = [(name, env, params, s, cfg.eval.T) for s in cfg.eval.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_regret_worker, jobs))
    else:
        rows = [_regret_worker(j) for j in jobs]
    curve = RegretCurve(np.array(rows), tuple(cfg.eval.seeds), name, "bandit")
    out.write("regret", "csv", curve.to_csv(cfg.eval.every, out.header()))
    out.write_json("regret_summary", {
        "agent": name, "T": cfg.eval.T, "seeds": list(cfg.eval.seeds),
        "final_mean": curve.at(cfg.eval.T), "final_std_error": float(curve.std_error[-1]),
    })


def cmd_dr(cfg: ExperimentConfig, out: Outputs) -> None:
    name, _ = _require_method(cfg, DR_METHODS)
    env = build_env(cfg)
    if not isinstance(env, ObservationalSpec):
        raise ConfigInvalid("env.kind: the double-robustness grid uses env.kind 'observational'")
    table = dr_experiment(name, env, cfg.eval.n, cfg.eval.replications, cfg.seed)
    out.write("bias", "csv", table.to_csv(out.header()))
    out.write_json("bias", table.to_dict())


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "regret": cmd_regret, "dr": cmd_dr}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptrl", description="Adaptive-intervention experiments from a config file.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for per-seed fan-out")
    return p


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigInvalid("--seed must be an unsigned 64-bit integer")
            cfg = cfg.model_copy(update={"seed": args.seed})
        if args.threads < 1:
            raise ConfigInvalid("--threads must be >= 1")
        out = Outputs(cfg, Path(args.out if args.out is not None else cfg.output))
        out.write_config()
        if args.command == "regret":
            cmd_regret(cfg, out, args.threads)
        else:
            COMMANDS[args.command](cfg, out)
    except ConfigInvalid as exc:
        print(f"ConfigInvalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdaptRLError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in out.files:
        print(f)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
