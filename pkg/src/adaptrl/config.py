"""Strict experiment configuration with line-anchored validation messages."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigInvalid

ENV_KINDS = ("smart", "observational", "separable", "mdp", "bandit")
OFFLINE_METHODS = ("q_learning", "g_estimation", "bowl", "owl", "ggq", "vlearning")
VALUE_METHODS = ("iptw", "aiptw", "plugin", "monte_carlo")
DR_METHODS = ("aiptw", "g_estimation")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvSection(_Strict):
    kind: Literal["smart", "observational", "separable", "mdp", "bandit"]
    params: dict[str, Any] = Field(default_factory=dict)


class MethodSection(_Strict):
    name: str
    params: dict[str, Any] = Field(default_factory=dict)


class EvalSection(_Strict):
    n: int = Field(1000, ge=1)
    T: int = Field(1000, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0])
    replications: int = Field(200, ge=2)
    gamma: float = Field(1.0, ge=0.0, le=1.0)
    n_boot: int = Field(200, ge=0)
    rollouts: int = Field(10_000, ge=2)
    every: int = Field(1, ge=1)
    tolerances: dict[str, float] = Field(default_factory=dict)


class ExperimentConfig(_Strict):
    env: EnvSection
    method: MethodSection | None = None
    eval: EvalSection = Field(default_factory=EvalSection)
    data: str | None = None
    regime: str | None = None
    output: str = "out"
    seed: int = Field(0, ge=0, lt=2**64)

    def resolved(self) -> dict:
        """Canonical dictionary of everything that affects results (not the output path)."""
        d = self.model_dump(mode="json")
        d.pop("output")
        return d

    def hash(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _key_lines(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _key_lines(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            p = path + (i,)
            out[p] = v.start_mark.line + 1
            _key_lines(v, p, out)
    return out


def _line_for(loc: tuple, lines: dict) -> int | None:
    loc = tuple(x for x in loc if not (isinstance(x, str) and x.startswith(("function-", "literal["))))
    while loc:
        if loc in lines:
            return lines[loc]
        loc = loc[:-1]
    return None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse YAML (JSON is a subset) into a validated :class:`ExperimentConfig`.

    Raises :class:`ConfigInvalid` with ``source:line`` anchors.
    """
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigInvalid(f"{source}{line}: malformed config: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"{source}:1: config must be a mapping")
    lines = _key_lines(node)
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except pydantic.ValidationError as exc:
        msgs = []
        for err in exc.errors():
            line = _line_for(tuple(err["loc"]), lines)
            where = f"{source}:{line}" if line else source
            msgs.append(f"{where}: {'.'.join(str(x) for x in err['loc'])}: {err['msg']}")
        raise ConfigInvalid("\n".join(msgs)) from exc
    _semantic_checks(cfg, lines, source)
    return cfg


def _semantic_checks(cfg: ExperimentConfig, lines: dict, source: str) -> None:
    def fail(loc, msg):
        line = _line_for(loc, lines)
        raise ConfigInvalid(f"{source}:{line}: {'.'.join(map(str, loc))}: {msg}" if line else f"{source}: {msg}")

    if cfg.env.kind in ("smart", "observational", "separable", "mdp") and cfg.eval.n < 1:
        fail(("eval", "n"), "sample size must be positive")
    if not cfg.eval.seeds:
        fail(("eval", "seeds"), "at least one seed is required")
    if len(set(cfg.eval.seeds)) != len(cfg.eval.seeds):
        fail(("eval", "seeds"), "seeds must be distinct")


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"{p}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(p))
