"""Domain types shared by every estimator, agent and simulator.

A :class:`Dataset` is stored column-wise (one row per decision stage) so the
estimators can slice whole stages as arrays; :class:`Trajectory` and
:class:`StageRecord` are the record-level view of the same data.

The history vector at stage ``t`` is laid out as::

    X_0, A_0, Y_1, X_1, A_1, Y_2, ..., X_t

with ``p`` columns per state block. Columns are named ``X{s}_{j}``, ``A{s}``
and ``Y{s}`` (see :func:`history_layout`).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DivergentReturn,
    EmptyInput,
    NonFiniteInput,
    PositivityViolation,
    StageOutOfRange,
    ValidationError,
)

MISSING = float("nan")


# --------------------------------------------------------------------------
# randomness


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream id; one independent stream per replicate or agent."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngSpec":
        # nested streams: fold the parent stream into the seed deterministically
        return RngSpec(self.seed * 1_000_003 + self.stream_id, stream_id)


def as_generator(rng: RngSpec | np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    return RngSpec(0 if rng is None else int(rng)).generator()


# --------------------------------------------------------------------------
# small numeric helpers


def discounted_return(rewards: Sequence[float], gamma: float, *, indefinite: bool = False) -> float:
    """Sum of ``gamma**k * rewards[k]``.

    ``indefinite=True`` marks a stream without a fixed horizon, for which an
    undiscounted sum is refused.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must lie in [0, 1], got {gamma}")
    if indefinite and gamma >= 1.0:
        raise DivergentReturn("gamma = 1 is undefined on an indefinite-horizon stream")
    r = np.asarray(rewards, dtype=float)
    if not np.all(np.isfinite(r)):
        raise NonFiniteInput("rewards contain NaN or inf")
    if r.size == 0:
        return 0.0
    total = 0.0
    # Horner form keeps gamma = 0 exact (0**0 == 1 for the first term)
    for value in r[::-1]:
        total = float(value) + gamma * total
    return total


def argmax_tiebreak(scores: Sequence[float]) -> int:
    """Index of the maximum; exact ties go to the lowest index."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise EmptyInput("argmax over an empty score list")
    if not np.all(np.isfinite(s)):
        raise NonFiniteInput("scores contain NaN or inf")
    return int(np.argmax(s))


def signed_code(action: int | np.ndarray) -> int | np.ndarray:
    """Binary action index to the +-1 coding (0 -> -1, 1 -> +1)."""
    return 2 * action - 1


def index_from_signed(code: int | np.ndarray) -> int | np.ndarray:
    return (np.asarray(code) + 1) // 2


# --------------------------------------------------------------------------
# record-level types


@dataclass(frozen=True)
class StageRecord:
    state: np.ndarray
    action: int
    reward: float = MISSING
    behavior_prob: float | None = None
    available: bool = True

    def __post_init__(self):
        state = np.asarray(self.state, dtype=float).reshape(-1)
        if not np.all(np.isfinite(state)):
            raise NonFiniteInput("state entries must be finite")
        object.__setattr__(self, "state", state)
        if self.behavior_prob is not None and not 0.0 < self.behavior_prob <= 1.0:
            raise PositivityViolation(f"behavior probability {self.behavior_prob} outside (0, 1]")

    @property
    def reward_missing(self) -> bool:
        return math.isnan(self.reward)


@dataclass(frozen=True)
class Trajectory:
    """Ordered stage records plus the state reached after the last action.

    ``terminal_state`` is ``None`` when the trajectory ends without a recorded
    post-decision state (finite-horizon data).
    """

    stages: tuple[StageRecord, ...]
    terminal_state: np.ndarray | None = None

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise ValidationError("a trajectory needs at least one stage")
        dims = {s.state.size for s in stages}
        if len(dims) != 1:
            raise DimensionMismatch(f"stage states have differing dimensions {sorted(dims)}")
        object.__setattr__(self, "stages", stages)
        if self.terminal_state is not None:
            object.__setattr__(
                self, "terminal_state", np.asarray(self.terminal_state, dtype=float).reshape(-1)
            )

    def __len__(self) -> int:
        return len(self.stages)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.stages])


# --------------------------------------------------------------------------
# columnar dataset


@dataclass(frozen=True)
class StageBatch:
    """All trajectories' records at one stage of a finite-horizon dataset."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_prob: np.ndarray
    available: np.ndarray


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Longitudinal records, one row per (trajectory, stage).

    Rows are ordered by trajectory then stage. ``horizon`` is ``T`` for a
    finite-horizon dataset (every trajectory has ``T + 1`` stages) and ``None``
    for indefinite horizons. Missing rewards and unknown behaviour
    probabilities are NaN.
    """

    traj_index: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_prob: np.ndarray
    available: np.ndarray
    terminal_states: np.ndarray
    horizon: int | None
    n_actions: tuple[int, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ti = np.asarray(self.traj_index, dtype=np.int64)
        n = ti.size
        if n == 0:
            raise EmptyInput("dataset has no rows")
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(n, -1) if states.size else np.zeros((n, 0))
        if states.shape[0] != n:
            raise DimensionMismatch("states rows do not match traj_index")
        if not np.all(np.isfinite(states)):
            raise NonFiniteInput("state entries must be finite")
        if np.any(np.diff(ti) < 0) or ti[0] != 0 or np.any(np.diff(ti) > 1):
            raise ValidationError("rows must be grouped by consecutive trajectory index starting at 0")
        actions = np.asarray(self.actions, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=float)
        probs = np.asarray(self.behavior_prob, dtype=float)
        avail = np.asarray(self.available, dtype=bool)
        for name, arr in (("actions", actions), ("rewards", rewards), ("behavior_prob", probs), ("available", avail)):
            if arr.shape != (n,):
                raise DimensionMismatch(f"{name} must have shape ({n},)")
        known = ~np.isnan(probs)
        if np.any((probs[known] <= 0.0) | (probs[known] > 1.0)):
            raise PositivityViolation("recorded behaviour probabilities must lie in (0, 1]")
        if np.any(np.isinf(rewards)):
            raise NonFiniteInput("rewards must be finite or missing")
        n_traj = int(ti[-1]) + 1
        term = np.asarray(self.terminal_states, dtype=float)
        if term.size == 0:
            term = np.full((n_traj, states.shape[1]), np.nan)
        term = term.reshape(n_traj, states.shape[1])
        lengths = np.bincount(ti, minlength=n_traj)
        horizon = self.horizon
        n_act = tuple(int(k) for k in self.n_actions)
        if horizon is not None:
            if np.any(lengths != horizon + 1):
                raise ValidationError(f"finite horizon T={horizon} needs exactly {horizon + 1} stages per trajectory")
            if len(n_act) == 1 and horizon > 0:
                n_act = n_act * (horizon + 1)
            if len(n_act) != horizon + 1:
                raise ValidationError("n_actions needs one entry per stage")
        elif len(n_act) != 1:
            raise ValidationError("indefinite-horizon datasets take a single action count")
        if np.any(actions < 0):
            raise ValidationError("actions must be non-negative indices")
        stage = self._stage_of(ti)
        k = np.asarray(n_act)[np.minimum(stage, len(n_act) - 1)]
        if np.any(actions >= k):
            raise ValidationError("action index outside the stage's action space")
        for name, arr in (
            ("traj_index", ti), ("states", states), ("actions", actions), ("rewards", rewards),
            ("behavior_prob", probs), ("available", avail), ("terminal_states", term),
        ):
            object.__setattr__(self, name, _readonly(arr))
        object.__setattr__(self, "n_actions", n_act)

    @staticmethod
    def _stage_of(ti: np.ndarray) -> np.ndarray:
        starts = np.r_[0, np.flatnonzero(np.diff(ti)) + 1]
        stage = np.arange(ti.size) - np.repeat(starts, np.diff(np.r_[starts, ti.size]))
        return stage

    # ---- construction -------------------------------------------------

    @classmethod
    def from_trajectories(
        cls, trajectories: Iterable[Trajectory], n_actions: Sequence[int] | int, horizon: int | None = None,
        metadata: dict | None = None,
    ) -> "Dataset":
        trajs = list(trajectories)
        if not trajs:
            raise EmptyInput("no trajectories")
        p = trajs[0].stages[0].state.size
        rows = [(i, s) for i, tr in enumerate(trajs) for s in tr.stages]
        if any(s.state.size != p for _, s in rows):
            raise DimensionMismatch("state dimension must be constant within a dataset")
        term = np.full((len(trajs), p), np.nan)
        for i, tr in enumerate(trajs):
            if tr.terminal_state is not None:
                term[i] = tr.terminal_state
        k = (n_actions,) if isinstance(n_actions, (int, np.integer)) else tuple(n_actions)
        return cls(
            traj_index=np.array([i for i, _ in rows]),
            states=np.array([s.state for _, s in rows]).reshape(len(rows), p),
            actions=np.array([s.action for _, s in rows]),
            rewards=np.array([s.reward for _, s in rows], dtype=float),
            behavior_prob=np.array([np.nan if s.behavior_prob is None else s.behavior_prob for _, s in rows]),
            available=np.array([s.available for _, s in rows], dtype=bool),
            terminal_states=term,
            horizon=horizon,
            n_actions=k,
            metadata=dict(metadata or {}),
        )

    @classmethod
    def from_stage_arrays(
        cls, states: Sequence[np.ndarray], actions: Sequence[np.ndarray], rewards: Sequence[np.ndarray],
        behavior_prob: Sequence[np.ndarray] | None = None, n_actions: Sequence[int] | int = 2,
        available: Sequence[np.ndarray] | None = None, metadata: dict | None = None,
    ) -> "Dataset":
        """Build a finite-horizon dataset from per-stage arrays (stage-major)."""
        n_stages = len(states)
        n = np.asarray(actions[0]).shape[0]
        st = np.stack([np.asarray(x, dtype=float).reshape(n, -1) for x in states], axis=1)
        p = st.shape[2]
        def stack(seq, fill):
            if seq is None:
                return np.full(n * n_stages, fill)
            return np.stack([np.asarray(x) for x in seq], axis=1).reshape(-1)
        return cls(
            traj_index=np.repeat(np.arange(n), n_stages),
            states=st.reshape(n * n_stages, p),
            actions=stack(actions, 0),
            rewards=stack(rewards, np.nan).astype(float),
            behavior_prob=stack(behavior_prob, np.nan).astype(float),
            available=stack(available, True).astype(bool),
            terminal_states=np.full((n, p), np.nan),
            horizon=n_stages - 1,
            n_actions=(n_actions,) if isinstance(n_actions, (int, np.integer)) else tuple(n_actions),
            metadata=dict(metadata or {}),
        )

    def replace(self, **changes) -> "Dataset":
        fields_ = dict(
            traj_index=self.traj_index, states=self.states, actions=self.actions, rewards=self.rewards,
            behavior_prob=self.behavior_prob, available=self.available, terminal_states=self.terminal_states,
            horizon=self.horizon, n_actions=self.n_actions, metadata=dict(self.metadata),
        )
        fields_.update(changes)
        return Dataset(**fields_)

    def subset(self, traj_ids: np.ndarray) -> "Dataset":
        """Dataset restricted to (and re-indexed over) the given trajectories, in order."""
        traj_ids = np.asarray(traj_ids, dtype=np.int64)
        offs = self.offsets
        rows = np.concatenate([np.arange(offs[i], offs[i + 1]) for i in traj_ids]) if traj_ids.size else np.array([], int)
        lengths = self.lengths[traj_ids]
        return Dataset(
            traj_index=np.repeat(np.arange(traj_ids.size), lengths),
            states=self.states[rows], actions=self.actions[rows], rewards=self.rewards[rows],
            behavior_prob=self.behavior_prob[rows], available=self.available[rows],
            terminal_states=self.terminal_states[traj_ids], horizon=self.horizon,
            n_actions=self.n_actions, metadata=dict(self.metadata),
        )

    # ---- views ---------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return int(self.traj_index.size)

    @cached_property
    def n_trajectories(self) -> int:
        return int(self.traj_index[-1]) + 1

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.bincount(self.traj_index, minlength=self.n_trajectories)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.r_[0, np.cumsum(self.lengths)]

    @cached_property
    def stage_index(self) -> np.ndarray:
        return self._stage_of(self.traj_index)

    def actions_at(self, t: int) -> int:
        return self.n_actions[min(t, len(self.n_actions) - 1)]

    def stage(self, t: int) -> StageBatch:
        if self.horizon is None:
            raise ValidationError("stage slicing requires a finite-horizon dataset")
        if not 0 <= t <= self.horizon:
            raise StageOutOfRange(f"stage {t} outside 0..{self.horizon}")
        sl = slice(t, None, self.horizon + 1)
        return StageBatch(self.states[sl], self.actions[sl], self.rewards[sl], self.behavior_prob[sl], self.available[sl])

    @property
    def trajectories(self) -> list[Trajectory]:
        out = []
        offs = self.offsets
        for i in range(self.n_trajectories):
            recs = tuple(
                StageRecord(
                    self.states[r], int(self.actions[r]), float(self.rewards[r]),
                    None if np.isnan(self.behavior_prob[r]) else float(self.behavior_prob[r]),
                    bool(self.available[r]),
                )
                for r in range(offs[i], offs[i + 1])
            )
            term = self.terminal_states[i]
            out.append(Trajectory(recs, None if np.all(np.isnan(term)) else term.copy()))
        return out

    def returns(self, gamma: float = 1.0) -> np.ndarray:
        """Discounted return of every trajectory (missing rewards are rejected)."""
        if np.any(np.isnan(self.rewards)):
            raise NonFiniteInput("returns need complete rewards; impute missing values first")
        disc = gamma ** self.stage_index.astype(float) if gamma != 1.0 else np.ones(self.n_rows)
        if gamma == 0.0:
            disc = (self.stage_index == 0).astype(float)
        return np.bincount(self.traj_index, weights=disc * self.rewards, minlength=self.n_trajectories)

    # ---- history summaries ---------------------------------------------

    def histories(self, t: int) -> np.ndarray:
        """Stage-``t`` history matrix (one row per trajectory), see :func:`history_layout`."""
        if self.horizon is None:
            raise ValidationError("history matrices require a finite-horizon dataset")
        if not 0 <= t <= self.horizon:
            raise StageOutOfRange(f"stage {t} outside 0..{self.horizon}")
        blocks = []
        for s in range(t + 1):
            b = self.stage(s)
            blocks.append(b.states)
            if s < t:
                blocks.append(b.actions[:, None].astype(float))
                blocks.append(b.rewards[:, None])
        return np.hstack(blocks)

    def check_positivity(self) -> None:
        known = ~np.isnan(self.behavior_prob)
        if np.any(self.behavior_prob[known] <= 0.0):
            raise PositivityViolation("zero behaviour probability recorded")


def history_layout(p: int, t: int) -> list[str]:
    """Column names of the stage-``t`` history vector for state dimension ``p``."""
    names: list[str] = []
    for s in range(t + 1):
        names.extend(f"X{s}_{j}" for j in range(p))
        if s < t:
            names.extend([f"A{s}", f"Y{s + 1}"])
    return names


def history_vector(traj: Trajectory, t: int) -> np.ndarray:
    """History at stage ``t`` built only from records with index <= t."""
    if not 0 <= t < len(traj):
        raise StageOutOfRange(f"stage {t} outside 0..{len(traj) - 1}")
    parts: list[np.ndarray] = []
    for s in range(t + 1):
        rec = traj.stages[s]
        parts.append(rec.state)
        if s < t:
            parts.append(np.array([float(rec.action), rec.reward]))
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# feature maps

FEATURE_KINDS = ("linear", "linear_interaction", "polynomial", "onehot_cross")


@dataclass(frozen=True)
class FeatureMap:
    """Maps a history summary and an action to a feature vector.

    ``kind`` is one of

    * ``linear`` - ``(H0, 1{a=1}, ..., 1{a=K-1})``
    * ``linear_interaction`` - ``(H0, H1*1{a=1}, ..., H1*1{a=K-1})``; for
      binary actions this is ``(H0, H1*a)``
    * ``polynomial`` - as ``linear_interaction`` with each selected column
      expanded to powers ``1..degree``
    * ``onehot_cross`` - ``(H0*1{a=0}, ..., H0*1{a=K-1})``, a separate model per
      action

    ``main_columns``/``tailoring_columns`` select history columns by index or
    name; ``None`` selects the current state block.
    """

    kind: str = "linear_interaction"
    main_columns: tuple | None = None
    tailoring_columns: tuple | None = None
    include_intercept: bool = True
    degree: int = 1

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValidationError(f"unknown feature kind {self.kind!r}; expected one of {FEATURE_KINDS}")
        if self.kind == "polynomial" and self.degree < 1:
            raise ValidationError("polynomial degree must be >= 1")
        for name in ("main_columns", "tailoring_columns"):
            cols = getattr(self, name)
            if cols is not None:
                object.__setattr__(self, name, tuple(cols))

    def _resolve(self, cols, p: int, t: int) -> np.ndarray:
        width = (t + 1) * p + 2 * t
        if cols is None:
            return np.arange(t * (p + 2), t * (p + 2) + p)
        names = history_layout(p, t)
        out = []
        for c in cols:
            if isinstance(c, str):
                if c not in names:
                    raise ValidationError(f"history column {c!r} not available at stage {t}")
                out.append(names.index(c))
            else:
                c = int(c)
                if not -width <= c < width:
                    raise StageOutOfRange(f"history column {c} outside width {width}")
                out.append(c % width)
        return np.asarray(out, dtype=np.int64)

    def _expand(self, block: np.ndarray) -> np.ndarray:
        n = block.shape[0]
        parts = [np.ones((n, 1))] if self.include_intercept else []
        if self.kind == "polynomial":
            for j in range(block.shape[1]):
                parts.extend(block[:, j : j + 1] ** k for k in range(1, self.degree + 1))
        else:
            parts.append(block)
        return np.hstack(parts) if parts else np.zeros((n, 0))

    def summarize(self, H: np.ndarray, p: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        """``(H_t0, H_t1)`` for a history matrix (or a single history vector)."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        h0 = self._expand(H[:, self._resolve(self.main_columns, p, t)])
        h1 = self._expand(H[:, self._resolve(self.tailoring_columns, p, t)])
        return h0, h1

    def dims(self, p: int, t: int) -> tuple[int, int]:
        h0, h1 = self.summarize(np.zeros((1, (t + 1) * p + 2 * t)), p, t)
        return h0.shape[1], h1.shape[1]

    def output_dim(self, p: int, t: int, n_actions: int) -> int:
        d0, d1 = self.dims(p, t)
        if self.kind == "linear":
            return d0 + n_actions - 1
        if self.kind == "onehot_cross":
            return d0 * n_actions
        return d0 + d1 * (n_actions - 1)

    def design_from_summary(self, h0: np.ndarray, h1: np.ndarray, a, n_actions: int) -> np.ndarray:
        n = h0.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=np.int64), (n,))
        if self.kind == "onehot_cross":
            out = np.zeros((n, h0.shape[1] * n_actions))
            for k in range(n_actions):
                m = a == k
                out[m, k * h0.shape[1] : (k + 1) * h0.shape[1]] = h0[m]
            return out
        if self.kind == "linear":
            ind = (a[:, None] == np.arange(1, n_actions)[None, :]).astype(float)
            return np.hstack([h0, ind])
        blocks = [h0]
        for k in range(1, n_actions):
            blocks.append(h1 * (a == k)[:, None])
        return np.hstack(blocks)

    def design(self, H: np.ndarray, a, n_actions: int, p: int, t: int) -> np.ndarray:
        h0, h1 = self.summarize(H, p, t)
        return self.design_from_summary(h0, h1, a, n_actions)

    def to_dict(self) -> dict:
        return {
            "type": "history",
            "kind": self.kind,
            "main_columns": None if self.main_columns is None else list(self.main_columns),
            "tailoring_columns": None if self.tailoring_columns is None else list(self.tailoring_columns),
            "include_intercept": self.include_intercept,
            "degree": self.degree,
        }


def history_summary(traj: Trajectory, t: int, fmap: FeatureMap) -> tuple[np.ndarray, np.ndarray]:
    """``(H_t0, H_t1)`` for one trajectory at stage ``t`` (no look-ahead)."""
    h = history_vector(traj, t)
    h0, h1 = fmap.summarize(h, traj.stages[0].state.size, t)
    return h0[0], h1[0]


@dataclass(frozen=True)
class MarkovFeature:
    """State-action features for time-homogeneous problems.

    ``kind="tabular"`` is the saturated one-hot over (live state, action) pairs
    for a discrete state stored in column 0 (the absorbing state gets no
    columns); ``kind="map"`` applies ``fmap`` to the current state. Features
    are zero at the absorbing state, so every linear Q-function vanishes there.
    """

    kind: str = "tabular"
    n_states: int = 0
    n_actions: int = 2
    absorbing_state: float | None = None
    fmap: FeatureMap | None = None
    state_dim: int = 1

    def __post_init__(self):
        if self.kind not in ("tabular", "map"):
            raise ValidationError(f"unknown Markov feature kind {self.kind!r}")
        if self.kind == "map" and self.fmap is None:
            raise ValidationError("kind='map' needs a FeatureMap")

    def is_absorbing(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.absorbing_state is None:
            return np.zeros(X.shape[0], dtype=bool)
        return X[:, 0] == self.absorbing_state

    @property
    def live_states(self) -> np.ndarray:
        s = np.arange(self.n_states)
        return s if self.absorbing_state is None else s[s != self.absorbing_state]

    def _column(self, s: np.ndarray) -> np.ndarray:
        lookup = np.full(self.n_states, -1)
        lookup[self.live_states] = np.arange(self.live_states.size)
        if np.any((s < 0) | (s >= self.n_states)):
            raise StageOutOfRange(f"state index outside 0..{self.n_states - 1}")
        return lookup[s]

    @property
    def dim(self) -> int:
        if self.kind == "tabular":
            return self.live_states.size * self.n_actions
        return self.fmap.output_dim(self.state_dim, 0, self.n_actions)

    def design(self, X: np.ndarray, a, n_actions: int | None = None, p: int | None = None, t: int = 0) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=np.int64), (n,))
        if self.kind == "tabular":
            out = np.zeros((n, self.dim))
            idx = np.flatnonzero(~self.is_absorbing(X))
            col = self._column(X[idx, 0].astype(np.int64))
            out[idx, col * self.n_actions + a[idx]] = 1.0
            return out
        out = self.fmap.design(X, a, self.n_actions, X.shape[1], 0)
        out[self.is_absorbing(X)] = 0.0
        return out

    def state_design(self, X: np.ndarray) -> np.ndarray:
        """Action-free features of the state, used by value models."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        if self.kind == "tabular":
            out = np.zeros((n, self.live_states.size))
            live = np.flatnonzero(~self.is_absorbing(X))
            out[live, self._column(X[live, 0].astype(np.int64))] = 1.0
            return out
        h0, _ = self.fmap.summarize(X, X.shape[1], 0)
        h0 = h0.copy()
        h0[self.is_absorbing(X)] = 0.0
        return h0

    def to_dict(self) -> dict:
        return {
            "type": "markov",
            "kind": self.kind,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "absorbing_state": self.absorbing_state,
            "fmap": None if self.fmap is None else self.fmap.to_dict(),
            "state_dim": self.state_dim,
        }


def feature_from_dict(d: dict) -> FeatureMap | MarkovFeature:
    d = dict(d)
    typ = d.pop("type", "history")
    if typ == "markov":
        fm = d.pop("fmap", None)
        return MarkovFeature(fmap=None if fm is None else feature_from_dict(fm), **d)
    for key in ("main_columns", "tailoring_columns"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return FeatureMap(**d)


# --------------------------------------------------------------------------
# regimes


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def soft_threshold(s: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(s) * np.maximum(np.abs(s) - threshold, 0.0)


@dataclass(frozen=True)
class DecisionRule:
    """One stage's rule.

    ``kind`` is ``deterministic`` (argmax of ``design @ theta`` with lowest-index
    ties, optionally soft-thresholding the binary contrast), ``softmax``
    (probabilities proportional to ``exp(score / temperature)``) or ``clipped``
    (``base`` rule with the designated action's probability clipped to
    ``[pi_min, pi_max]``).
    """

    kind: str
    theta: np.ndarray | None
    feature: FeatureMap | MarkovFeature | None
    n_actions: int = 2
    threshold: float = 0.0
    temperature: float = 1.0
    base: "DecisionRule | None" = None
    pi_min: float = 0.0
    pi_max: float = 1.0
    designated_action: int = 1

    def __post_init__(self):
        if self.kind not in ("deterministic", "softmax", "clipped"):
            raise ValidationError(f"unknown rule kind {self.kind!r}")
        if self.theta is not None:
            object.__setattr__(self, "theta", _readonly(np.asarray(self.theta, dtype=float).reshape(-1)))
        if self.kind == "clipped":
            if self.base is None:
                raise ValidationError("clipped rule needs a base rule")
            if not 0.0 <= self.pi_min <= self.pi_max <= 1.0:
                raise ValidationError("clip bounds must satisfy 0 <= pi_min <= pi_max <= 1")
        if self.kind == "softmax" and self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.threshold < 0:
            raise ValidationError("threshold must be >= 0")

    def scores(self, H: np.ndarray, p: int, t: int) -> np.ndarray:
        H = np.atleast_2d(np.asarray(H, dtype=float))
        cols = [self.feature.design(H, k, self.n_actions, p, t) @ self.theta for k in range(self.n_actions)]
        return np.column_stack(cols)

    def probs(self, H: np.ndarray, p: int, t: int) -> np.ndarray:
        if self.kind == "clipped":
            base = self.base.probs(H, p, t)
            k = self.designated_action
            q = np.clip(base[:, k], self.pi_min, self.pi_max)
            rest = np.delete(base, k, axis=1)
            tot = rest.sum(axis=1, keepdims=True)
            share = np.where(tot > 0, rest / np.where(tot > 0, tot, 1.0), 1.0 / max(rest.shape[1], 1))
            out = np.insert(share * (1.0 - q)[:, None], k, q, axis=1)
            return out
        s = self.scores(H, p, t)
        if self.kind == "softmax":
            return _softmax(s / self.temperature)
        if self.threshold > 0.0:
            if self.n_actions != 2:
                raise ValidationError("soft-thresholding is defined for binary actions only")
            contrast = soft_threshold(s[:, 1] - s[:, 0], self.threshold)
            choice = (contrast > 0).astype(np.int64)
        else:
            choice = np.argmax(s, axis=1)
        out = np.zeros_like(s)
        out[np.arange(s.shape[0]), choice] = 1.0
        return out

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "theta": None if self.theta is None else [float(v) for v in self.theta],
            "feature_map": None if self.feature is None else self.feature.to_dict(),
            "n_actions": self.n_actions,
            "threshold": self.threshold,
        }
        if self.kind == "softmax":
            d["temperature"] = self.temperature
        if self.kind == "clipped":
            d.update(base=self.base.to_dict(), pi_min=self.pi_min, pi_max=self.pi_max,
                     designated_action=self.designated_action)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionRule":
        d = dict(d)
        feat = d.pop("feature_map", None)
        base = d.pop("base", None)
        return cls(
            feature=None if feat is None else feature_from_dict(feat),
            base=None if base is None else cls.from_dict(base),
            **d,
        )


@dataclass(frozen=True)
class Regime:
    """Per-stage decision rules. A stationary regime applies ``rules[0]`` at every
    stage to the current state only."""

    rules: tuple[DecisionRule, ...]
    state_dim: int
    stationary: bool = False
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise ValidationError("a regime needs at least one rule")

    def rule(self, t: int) -> DecisionRule:
        if self.stationary:
            return self.rules[0]
        if not 0 <= t < len(self.rules):
            raise StageOutOfRange(f"regime has no rule for stage {t}")
        return self.rules[t]

    def _layout_stage(self, t: int) -> int:
        return 0 if self.stationary else t

    def probs(self, t: int, H: np.ndarray) -> np.ndarray:
        return self.rule(t).probs(H, self.state_dim, self._layout_stage(t))

    def actions(self, t: int, H: np.ndarray) -> np.ndarray:
        """Most probable action per row (the decision for deterministic rules)."""
        return np.argmax(self.probs(t, H), axis=1)

    def sample(self, t: int, H: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        P = self.probs(t, H)
        u = rng.random(P.shape[0])
        return np.minimum((np.cumsum(P, axis=1) < u[:, None]).sum(axis=1), P.shape[1] - 1)

    def to_dict(self) -> dict:
        return {
            "stages": [r.to_dict() for r in self.rules],
            "state_dim": self.state_dim,
            "stationary": self.stationary,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "Regime":
        return cls(
            rules=tuple(DecisionRule.from_dict(r) for r in d["stages"]),
            state_dim=int(d["state_dim"]),
            stationary=bool(d.get("stationary", False)),
            provenance=dict(d.get("provenance", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "Regime":
        return cls.from_dict(json.loads(text))


def policy_prob(regime: Regime, t: int, summary: np.ndarray, a: int) -> float | np.ndarray:
    """Probability that ``regime`` takes action ``a`` at stage ``t`` given the history."""
    P = regime.probs(t, summary)
    k = P.shape[1]
    if not 0 <= a < k:
        raise ValidationError(f"action {a} outside the stage-{t} action space of size {k}")
    out = P[:, a]
    return float(out[0]) if np.ndim(summary) == 1 else out


def constant_regime(action: int, n_stages: int, state_dim: int, n_actions: int = 2) -> Regime:
    """Always take ``action``; handy as a baseline and in tests."""
    fmap = FeatureMap("linear", main_columns=(), include_intercept=True)
    rules = []
    for _ in range(n_stages):
        theta = np.zeros(1 + n_actions - 1)
        if action > 0:
            theta[action] = 1.0
        else:
            theta[1:] = -1.0
        rules.append(DecisionRule("deterministic", theta, fmap, n_actions))
    return Regime(tuple(rules), state_dim)


# --------------------------------------------------------------------------
# CSV serialization


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def dataset_to_csv(data: Dataset, path: str | Path | None = None, header_comment: str | None = None) -> str:
    """Write one row per stage (``traj_id, t, state_*, action, reward, behavior_prob, available``).

    A trailing row with an empty ``action`` carries a trajectory's terminal
    state when one was recorded.
    """
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    p = data.state_dim
    w.writerow(["traj_id", "t", *[f"state_{j}" for j in range(p)], "action", "reward", "behavior_prob", "available"])
    offs = data.offsets
    for i in range(data.n_trajectories):
        for r in range(offs[i], offs[i + 1]):
            w.writerow([
                i, r - offs[i], *[_fmt(v) for v in data.states[r]], int(data.actions[r]),
                _fmt(data.rewards[r]), _fmt(data.behavior_prob[r]), int(data.available[r]),
            ])
        term = data.terminal_states[i]
        if not np.all(np.isnan(term)):
            w.writerow([i, offs[i + 1] - offs[i], *[_fmt(v) for v in term], "", "", "", ""])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def dataset_from_csv(
    source: str | Path, n_actions: Sequence[int] | int | None = None, horizon: int | None | str = "infer"
) -> Dataset:
    """Read the CSV format written by :func:`dataset_to_csv`.

    ``horizon="infer"`` gives a finite horizon when all trajectories have the
    same length and no terminal rows, else an indefinite one.
    """
    text = Path(source).read_text(encoding="utf-8") if not str(source).lstrip().startswith(("traj_id", "#")) else str(source)
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if header[:2] != ["traj_id", "t"] or header[-4:] != ["action", "reward", "behavior_prob", "available"]:
        raise ValidationError("CSV header must be traj_id, t, state_0.., action, reward, behavior_prob, available")
    p = len(header) - 6
    trajs: dict[int, list] = {}
    terms: dict[int, np.ndarray] = {}
    for row in reader:
        if not row:
            continue
        tid, t = int(row[0]), int(row[1])
        state = np.array([float(v) for v in row[2 : 2 + p]])
        action, reward, prob, avail = row[2 + p :]
        if action == "":
            terms[tid] = state
            continue
        recs = trajs.setdefault(tid, [])
        if t != len(recs):
            raise ValidationError(f"trajectory {tid}: stage {t} out of order")
        recs.append(StageRecord(
            state, int(action), MISSING if reward == "" else float(reward),
            None if prob == "" else float(prob), avail.strip() not in ("0", "false", "False"),
        ))
    ids = sorted(trajs)
    if ids != list(range(len(ids))):
        raise ValidationError("traj_id values must be 0..N-1")
    tr = [Trajectory(tuple(trajs[i]), terms.get(i)) for i in ids]
    if horizon == "infer":
        lens = {len(t) for t in tr}
        horizon = lens.pop() - 1 if len(lens) == 1 and not terms else None
    if n_actions is None:
        kmax = int(max(s.action for t in tr for s in t.stages)) + 1
        n_actions = (max(kmax, 2),)
    return Dataset.from_trajectories(tr, n_actions, horizon)
