"""Transition datasets, behavior-agnostic collection and JSON serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass
class TransitionRecord:
    state: object
    action: object
    reward: float
    next_state: object
    next_actions: list = field(default_factory=list)
    timestep: Optional[int] = None


@dataclass
class Dataset:
    """Columnar store of transitions, ordered by collection time.

    Tabular states/actions are int arrays of shape (n,); continuous ones are
    float arrays of shape (n, dim). ``next_actions`` has shape (n, m) or
    (n, m, action_dim) once augmented.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_actions: Optional[np.ndarray] = None
    timesteps: Optional[np.ndarray] = None
    trajectory_boundaries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.rewards)
        self.rewards = np.asarray(self.rewards, dtype=float)
        for name in ("states", "actions", "next_states"):
            if len(getattr(self, name)) != n:
                raise DatasetError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.next_actions is not None and len(self.next_actions) != n:
            raise DatasetError("next_actions length mismatch")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def m(self) -> int:
        return 0 if self.next_actions is None else self.next_actions.shape[1]

    @property
    def tabular(self) -> bool:
        return np.issubdtype(self.states.dtype, np.integer)

    @property
    def time_horizon(self) -> Optional[int]:
        return self.meta.get("time_horizon")

    def subset(self, n: int) -> "Dataset":
        """The first ``n`` records; prefixes keep the collection-order semantics."""
        b = [x for x in self.trajectory_boundaries if x < n]
        return replace(self, states=self.states[:n], actions=self.actions[:n], rewards=self.rewards[:n],
                       next_states=self.next_states[:n],
                       next_actions=None if self.next_actions is None else self.next_actions[:n],
                       timesteps=None if self.timesteps is None else self.timesteps[:n],
                       trajectory_boundaries=b, meta=dict(self.meta))

    def trajectory_slices(self) -> list:
        ends = list(self.trajectory_boundaries[1:]) + [len(self)]
        return [slice(s, e) for s, e in zip(self.trajectory_boundaries, ends)]

    @property
    def records(self) -> list:
        out = []
        for i in range(len(self)):
            out.append(TransitionRecord(
                state=_plain(self.states[i]), action=_plain(self.actions[i]), reward=float(self.rewards[i]),
                next_state=_plain(self.next_states[i]),
                next_actions=[] if self.next_actions is None else [_plain(a) for a in self.next_actions[i]],
                timestep=None if self.timesteps is None else int(self.timesteps[i])))
        return out

    @classmethod
    def from_records(cls, records: Sequence[TransitionRecord], trajectory_boundaries=None, meta=None) -> "Dataset":
        if not records:
            raise DatasetError("empty dataset")
        tabular = isinstance(records[0].state, (int, np.integer))
        dt = np.int64 if tabular else float
        nxt = [r.next_actions for r in records]
        has_next = len(nxt[0]) > 0
        if has_next and len({len(a) for a in nxt}) != 1:
            raise DatasetError("records carry different numbers of next actions")
        ts = [r.timestep for r in records]
        return cls(states=np.asarray([r.state for r in records], dtype=dt),
                   actions=np.asarray([r.action for r in records], dtype=dt),
                   rewards=np.asarray([r.reward for r in records], dtype=float),
                   next_states=np.asarray([r.next_state for r in records], dtype=dt),
                   next_actions=np.asarray(nxt, dtype=dt) if has_next else None,
                   timesteps=None if any(t is None for t in ts) else np.asarray(ts, dtype=np.int64),
                   trajectory_boundaries=list(trajectory_boundaries or [0]), meta=dict(meta or {}))

    def to_json(self) -> dict:
        recs = []
        for r in self.records:
            d = {"s": r.state, "a": r.action, "r": r.reward, "s_next": r.next_state, "a_next": r.next_actions}
            if r.timestep is not None:
                d["t"] = r.timestep
            recs.append(d)
        return {"meta": self.meta, "trajectory_boundaries": [int(b) for b in self.trajectory_boundaries],
                "records": recs}

    @classmethod
    def from_json(cls, d: dict) -> "Dataset":
        recs = [TransitionRecord(state=r["s"], action=r["a"], reward=r["r"], next_state=r["s_next"],
                                 next_actions=r.get("a_next", []), timestep=r.get("t")) for r in d["records"]]
        return cls.from_records(recs, d.get("trajectory_boundaries", [0]), d.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def collect_transitions(env, behavior, n: int, traj_len: int, seed: int = 0) -> Dataset:
    """Roll out ceil(n / traj_len) trajectories and keep the first n transitions.

    ``behavior`` is a policy, or a sequence of policies assigned to
    trajectories round-robin. Every (r, s') comes from ``env.step`` given the
    current (s, a), whatever produced the action.
    """
    if n < 1 or traj_len < 1:
        raise DatasetError("n and traj_len must be positive")
    schedule = list(behavior) if isinstance(behavior, (list, tuple)) else [behavior]
    n_traj = math.ceil(n / traj_len)
    rng = np.random.default_rng(seed)
    groups = [np.arange(g, n_traj, len(schedule)) for g in range(len(schedule))]
    s = env.reset(n_traj, rng)
    S, A, R, S1 = [], [], [], []
    for _ in range(traj_len):
        a = None
        for pol, idx in zip(schedule, groups):
            if len(idx) == 0:
                continue
            try:
                draw = pol.sample(s[idx], rng)
            except IndexError as exc:
                raise DatasetError("behavior policy undefined on a visited state") from exc
            if a is None:
                a = np.empty((n_traj,) + draw.shape[1:], dtype=draw.dtype)
            a[idx] = draw
        r, s1 = env.step(s, a, rng)
        S.append(s), A.append(a), R.append(r), S1.append(s1)
        s = s1

    def traj_major(xs):
        return np.stack(xs, axis=1).reshape((n_traj * traj_len,) + xs[0].shape[1:])[:n]

    t = np.tile(np.arange(traj_len), n_traj)[:n]
    meta = {"seed": seed, "env": getattr(env, "name", "env"), "gamma": env.gamma, "r_max": env.r_max,
            "behavior": [p.to_dict() for p in schedule], "traj_len": traj_len}
    return Dataset(traj_major(S), traj_major(A), traj_major(R), traj_major(S1), timesteps=t,
                   trajectory_boundaries=list(range(0, n, traj_len)), meta=meta)


def augment_next_actions(dataset: Dataset, pi, m: int = 5, seed: int = 0) -> Dataset:
    """Attach m i.i.d. draws a'_l ~ pi(.|s') to every record."""
    if m < 1:
        raise DatasetError("m must be >= 1")
    rng = np.random.default_rng(seed)
    nxt = pi.sample(_base_states(dataset.next_states, dataset), rng, size=m)
    meta = dict(dataset.meta, m=m, target=pi.to_dict())
    return replace(dataset, next_actions=nxt, meta=meta)


def _base_states(states, dataset: Dataset):
    if dataset.time_horizon is None:
        return states
    return states[:, 0] if dataset.tabular else states[:, :-1]


def time_augment(dataset: Dataset, horizon: int) -> Dataset:
    """States become (s, t) and next states (s', t + 1).

    Pair the result with a kernel truncated at ``horizon`` (``KernelSpec.time_horizon``)
    so that every q in the RKHS vanishes for t >= horizon.
    """
    if horizon < 1:
        raise DatasetError("horizon must be >= 1")
    if dataset.timesteps is None:
        raise DatasetError("records carry no timesteps")
    if dataset.time_horizon is not None:
        raise DatasetError("dataset is already time-augmented")
    t = dataset.timesteps

    def glue(s, tt):
        s = np.asarray(s)
        if dataset.tabular:
            return np.stack([s, tt], axis=1).astype(np.int64)
        return np.concatenate([s.reshape(len(s), -1), tt[:, None].astype(float)], axis=1)

    return replace(dataset, states=glue(dataset.states, t), next_states=glue(dataset.next_states, t + 1),
                   meta=dict(dataset.meta, time_horizon=int(horizon)))


class TimeFeatures:
    """Features of an environment with the timestep appended as the last coordinate."""

    def __init__(self, env):
        self.env = env

    def __call__(self, states, actions) -> np.ndarray:
        states = np.asarray(states)
        if self.env.kind == "tabular":
            base, t = states[..., 0], states[..., 1]
        else:
            base, t = states[..., :-1], states[..., -1]
        return np.concatenate([self.env.features(base, actions), np.asarray(t, dtype=float)[..., None]], axis=-1)


def featurizer(env, dataset: Dataset):
    return TimeFeatures(env) if dataset.time_horizon is not None else env.features
