"""Bellman residuals, the kernel Bellman loss and its concentration radius."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .envs.dataset import TransitionRecord
from .kernels import NEG_TOL, KernelError, KernelSpec, as_points, gram_matrix, kernel_quadratic, merge_duplicates

if TYPE_CHECKING:
    from .bounds.design import BellmanDesign


@dataclass(frozen=True)
class ResidualVector:
    values: np.ndarray
    m_used: int

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ConcentrationParams:
    r_max: float
    k_max: float
    gamma: float
    delta: float

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.r_max <= 0 or self.k_max < 0:
            raise ValueError("r_max must be positive and k_max nonnegative")


def empirical_residual(q, record: TransitionRecord, gamma: float, features) -> float:
    """q(x) - gamma * mean_l q(s', a'_l) - r for one record."""
    if not record.next_actions:
        raise ValueError("record carries no next actions")
    x = features(np.asarray([record.state]), np.asarray([record.action]))
    nxt_s = np.asarray([record.next_state] * len(record.next_actions))
    xn = features(nxt_s, np.asarray(record.next_actions))
    return float(q(x)[0] - gamma * np.mean(q(xn)) - record.reward)


def residuals(q, design: BellmanDesign) -> ResidualVector:
    return ResidualVector(design.residuals(q), design.m)


def v_statistic(kernel: KernelSpec, X, rho) -> float:
    """(1/n^2) sum_ij rho_i k(x_i, x_j) rho_j, merging repeated points first."""
    X = as_points(X)
    rho = np.asarray(rho, dtype=float)
    n = len(rho)
    Xu, ru = merge_duplicates(X, rho)
    if len(Xu) <= 3000:
        Kr = gram_matrix(kernel, Xu) @ ru
        val = math.fsum(ru * Kr)
    else:
        val = float(kernel_quadratic(kernel, Xu, ru))
    return val / n**2


def _root(sq: float) -> float:
    if sq < -NEG_TOL:
        raise KernelError(f"negative quadratic form {sq:.3e}")
    return math.sqrt(max(sq, 0.0))


def kernel_bellman_loss(q, design: BellmanDesign, kernel: KernelSpec) -> float:
    """sqrt((1/n^2) rho' K rho) with rho the empirical residual vector."""
    return _root(v_statistic(kernel, design.X, design.residuals(q)))


def expected_residuals(q, design: BellmanDesign, env, pi) -> np.ndarray:
    """R q(x_i) = q(x_i) - gamma E[q(x') | x_i] - E[r | x_i] under the true model."""
    ds = design.dataset
    if not hasattr(env, "expected_next_q"):
        raise ValueError("environment model unavailable")
    return (np.asarray(q(design.X), dtype=float)
            - design.gamma * env.expected_next_q(q, ds.states, ds.actions, pi)
            - env.mean_reward(ds.states, ds.actions))


def semi_expected_kbl(q, design: BellmanDesign, env, pi, kernel: KernelSpec) -> float:
    """The kernel Bellman loss with exact expected residuals in place of sampled ones."""
    return _root(v_statistic(kernel, design.X, expected_residuals(q, design, env, pi)))


def c_qk_bound(params: ConcentrationParams) -> float:
    """4 K_max r_max^2 / (1 - gamma)^2."""
    if params.gamma >= 1.0:
        raise ValueError("gamma must be < 1")
    return 4.0 * params.k_max * params.r_max**2 / (1.0 - params.gamma) ** 2


def concentration_radius(c_qk: float, delta: float, n: int) -> float:
    """sqrt(2 c log(2/delta) / n); L_K(q*) stays below it with probability >= 1 - delta."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.sqrt(2.0 * c_qk * math.log(2.0 / delta) / n)
