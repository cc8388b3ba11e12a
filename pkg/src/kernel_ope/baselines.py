"""Trajectory-wise importance sampling and a capped-weight Hoeffding interval.

Unlike the kernel bounds these need the behavior policy of every trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .envs.dataset import Dataset, DatasetError


class BaselineError(ValueError):
    pass


@dataclass
class TrajectorySet:
    """Equal-length trajectories with the policy that generated each one."""

    states: np.ndarray  # (m, T, ...)
    actions: np.ndarray
    rewards: np.ndarray  # (m, T)
    behavior: list  # one policy per trajectory
    target: object

    def __post_init__(self):
        if self.rewards.ndim != 2:
            raise BaselineError("rewards must have shape (m, T)")
        if len(self.behavior) != len(self.rewards):
            raise BaselineError("need one behavior policy per trajectory")

    @property
    def m(self) -> int:
        return self.rewards.shape[0]

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @classmethod
    def from_dataset(cls, dataset: Dataset, behavior, target, drop_partial: bool = True) -> "TrajectorySet":
        """Cut a collected dataset at its trajectory boundaries.

        ``behavior`` is one policy or the round-robin schedule used at collection.
        A shorter final trajectory is dropped, or rejected with ``drop_partial=False``.
        """
        sched = list(behavior) if isinstance(behavior, (list, tuple)) else [behavior]
        slices = dataset.trajectory_slices()
        if not slices:
            raise DatasetError("dataset has no trajectory boundaries")
        T = slices[0].stop - slices[0].start
        keep = [i for i, s in enumerate(slices) if s.stop - s.start == T]
        if len(keep) != len(slices) and not drop_partial:
            raise BaselineError("trajectories differ in length")
        idx = np.concatenate([np.arange(slices[i].start, slices[i].stop) for i in keep])
        m = len(keep)
        S = dataset.states[idx].reshape((m, T) + dataset.states.shape[1:])
        A = dataset.actions[idx].reshape((m, T) + dataset.actions.shape[1:])
        R = dataset.rewards[idx].reshape(m, T)
        return cls(S, A, R, [sched[i % len(sched)] for i in keep], target)

    def log_ratios(self) -> np.ndarray:
        """log prod_t pi(a_t|s_t) / pi0(a_t|s_t) per trajectory."""
        out = np.zeros(self.m)
        tgt = self.target
        for i, beh in enumerate(self.behavior):
            p = np.asarray(tgt.prob(self.states[i], self.actions[i]), dtype=float)
            q = np.asarray(beh.prob(self.states[i], self.actions[i]), dtype=float)
            if np.any(q <= 0):
                raise BaselineError(f"zero behavior probability on an observed action (trajectory {i})")
            with np.errstate(divide="ignore"):
                out[i] = float(np.sum(np.log(p) - np.log(q)))
        return out

    def returns(self, gamma: float) -> np.ndarray:
        return self.rewards @ (gamma ** np.arange(self.horizon))


def is_estimate(trajs: TrajectorySet, gamma: float) -> float:
    """(1/m) sum_i rho(tau_i) J(tau_i)."""
    rho = np.exp(trajs.log_ratios())
    return float(np.mean(rho * trajs.returns(gamma)))


@dataclass
class BaselineInterval:
    lower: float
    upper: float
    estimate: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "estimate": self.estimate,
                "diagnostics": dict(self.diagnostics)}


def hoeffding_halfwidth(value_range: float, delta: float, m: int) -> float:
    """Two-sided Hoeffding half-width for the mean of m variables in an interval of length value_range."""
    return value_range * math.sqrt(math.log(2.0 / delta) / (2.0 * m))


def is_hoeffding_interval(trajs: TrajectorySet, gamma: float, delta: float, weight_cap: float = 1e3,
                          reward_range: Optional[Sequence[float]] = None, r_max: float = 1.0) -> BaselineInterval:
    """Hoeffding interval around the mean of min(rho, cap) * J.

    Per-step rewards lie in ``reward_range`` (default [-r_max, r_max]), so J lies
    in that range times (1 - gamma^T) / (1 - gamma) and each capped term in
    [cap * min(0, J_lo), cap * max(0, J_hi)]. Capping biases the estimate; the
    interval is reported as not certified whenever a weight was capped.
    """
    if weight_cap <= 0:
        raise BaselineError("weight_cap must be positive")
    if not 0.0 < delta < 1.0:
        raise BaselineError("delta must lie in (0, 1)")
    lo_r, hi_r = (-r_max, r_max) if reward_range is None else (float(reward_range[0]), float(reward_range[1]))
    disc = (1.0 - gamma**trajs.horizon) / (1.0 - gamma)
    j_lo, j_hi = lo_r * disc, hi_r * disc
    rho = np.exp(trajs.log_ratios())
    capped = np.minimum(rho, weight_cap)
    J = trajs.returns(gamma)
    est = float(np.mean(capped * J))
    width = weight_cap * (max(0.0, j_hi) - min(0.0, j_lo))
    half = hoeffding_halfwidth(width, delta, trajs.m)
    n_capped = int(np.sum(rho > weight_cap))
    return BaselineInterval(est - half, est + half, est, {
        "uncapped_estimate": float(np.mean(rho * J)), "n_capped": n_capped,
        "certified": n_capped == 0, "weight_cap": weight_cap, "value_range": width,
        "max_weight": float(rho.max()), "label": "IS-Hoeffding (stand-in baseline)"})
