"""Exact evaluation of the dual bounds F+ and F- at given density ratios.

For Q = q0 + r_Q * (unit ball of k~) and W the unit ball of k,

    F+(w) = M(q0, w) + r_Q * |mu_w| + eps * |w|
    F-(w) = M(q0, w) - r_Q * |mu_w| - eps * |w|

where M is the doubly robust estimate and mu_w = E_d0[phi(x)] - (1/n) sum_i
w(x_i) (phi(x_i) - gamma/m sum_l phi(x'_il)) is a mean embedding under k~.
With q0 = 0 the first term is the weighted reward average (1/n) sum_i w_i r_i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from ..kernels import NEG_TOL, KernelError, RkhsFunction, kernel_sq_norms, rkhs_norm
from .config import BoundConfig
from .design import BellmanDesign


def omega_on_records(omega: RkhsFunction, design: BellmanDesign) -> np.ndarray:
    """omega(x_i) for every record, evaluated once per distinct point."""
    return np.asarray(omega(design.Xu), dtype=float)[design.x_inv]


def embedding_sq_norms(design: BellmanDesign, kernel, omega_values: np.ndarray) -> np.ndarray:
    """A + 2B + C = |mu_w|^2 for each column of ``omega_values``; shape (p,)."""
    C = design.q_side_coefficients(np.atleast_2d(np.asarray(omega_values, dtype=float).T).T)
    sq = kernel_sq_norms(kernel, design.Y, C)
    if np.any(sq < -NEG_TOL):
        raise KernelError(f"A + 2B + C is negative ({sq.min():.3e})")
    return np.maximum(sq, 0.0)


def _center_terms(design: BellmanDesign, q0: Optional[RkhsFunction]):
    """Return (E_d0[q0], shifted rewards r - D q0(P)); zeros and r when q0 is None."""
    if q0 is None:
        return 0.0, design.rewards
    return design.init.mean(q0), -design.residuals(q0)


@dataclass(frozen=True)
class DualEvaluation:
    """The pieces of F+ and F- at one omega, kept separate so epsilon can change."""

    linear: float  # M(q0, w): weighted reward average when Q is centred at 0
    embedding: float  # r_Q |mu_w|
    omega_norm: float
    q_radius: float

    def upper(self, epsilon: float) -> float:
        return self.linear + self.embedding + epsilon * self.omega_norm

    def lower(self, epsilon: float) -> float:
        return self.linear - self.embedding - epsilon * self.omega_norm

    @property
    def iq_plus(self) -> float:
        return self.embedding

    @property
    def iq_minus(self) -> float:
        return self.embedding


def evaluate_dual(omegas: Sequence[RkhsFunction], design: BellmanDesign, q_radius: float,
                  q_kernel, q_center: Optional[RkhsFunction] = None) -> list:
    """Evaluate every omega from scratch; one pass over the Q-side Gram for all of them."""
    vals = np.column_stack([omega_on_records(w, design) for w in omegas])
    sq = embedding_sq_norms(design, q_kernel, vals)
    e0, shifted = _center_terms(design, q_center)
    out = []
    for j, w in enumerate(omegas):
        linear = e0 + math.fsum(vals[:, j] * shifted) / design.n
        out.append(DualEvaluation(linear=linear, embedding=q_radius * math.sqrt(sq[j]),
                                  omega_norm=rkhs_norm(w), q_radius=q_radius))
    return out


@dataclass(frozen=True)
class DualRay:
    """F+ and F- along t -> t * omega, exact for every t.

    |mu_{t w}|^2 = A + 2 t B + t^2 C, so three exact embedding norms (at 0, w
    and -w) fix the whole ray.
    """

    base: float
    slope: float
    A: float
    B: float
    C: float
    omega_norm: float
    q_radius: float

    def at(self, t: float) -> DualEvaluation:
        sq = max(self.A + 2.0 * t * self.B + t * t * self.C, 0.0)
        return DualEvaluation(linear=self.base + t * self.slope, embedding=self.q_radius * math.sqrt(sq),
                              omega_norm=abs(t) * self.omega_norm, q_radius=self.q_radius)

    def objective(self, t: float, direction: str, epsilon: float) -> float:
        ev = self.at(t)
        return ev.upper(epsilon) if direction == "+" else -ev.lower(epsilon)

    def best_scale(self, direction: str, epsilon: float, bounds=(-1.0, 8.0)) -> float:
        """argmin over t of F+ (or of -F-); never worse than t = 0 or t = 1."""
        f = lambda t: self.objective(t, direction, epsilon)
        res = minimize_scalar(f, bounds=bounds, method="bounded", options={"xatol": 1e-10})
        return min((0.0, 1.0, float(res.x)), key=f)


def dual_rays(omegas: Sequence[RkhsFunction], design: BellmanDesign, q_radius: float, q_kernel,
              q_center: Optional[RkhsFunction] = None) -> list:
    """One Q-side Gram pass for the rays of several omegas."""
    vals = np.column_stack([omega_on_records(w, design) for w in omegas])
    cols = np.column_stack([np.zeros(len(vals))] + [c for j in range(vals.shape[1])
                                                     for c in (vals[:, j], -vals[:, j])])
    sq = embedding_sq_norms(design, q_kernel, cols)
    e0, shifted = _center_terms(design, q_center)
    out = []
    for j, w in enumerate(omegas):
        sp_, sm = sq[1 + 2 * j], sq[2 + 2 * j]
        out.append(DualRay(base=e0, slope=math.fsum(vals[:, j] * shifted) / design.n, A=float(sq[0]),
                           B=0.25 * (sp_ - sm), C=0.5 * (sp_ + sm) - float(sq[0]),
                           omega_norm=rkhs_norm(w), q_radius=q_radius))
    return out


def _radius(config: BoundConfig, q_radius: Optional[float]) -> float:
    r = config.q_radius if q_radius is None else q_radius
    if r is None:
        raise ValueError("q_radius is unset; pass it or use select_q_radius first")
    return float(r)


def bound_epsilon(design: BellmanDesign, config: BoundConfig) -> float:
    r_max = config.r_max if config.r_max is not None else design.problem.r_max
    return config.epsilon(design.n, design.gamma, r_max)


def iq_loss(omega: RkhsFunction, design: BellmanDesign, config: BoundConfig, sign: str = "+",
            q_radius: Optional[float] = None) -> float:
    """sup over q in Q (sign '+') or -Q (sign '-') of E_d0[q] - (1/n) sum_i w_i (q(x_i) - gamma qbar(x'_i)).

    For the zero-centred ball both signs give r_Q * sqrt(A + 2B + C).
    """
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    r_q = _radius(config, q_radius)
    vals = omega_on_records(omega, design)
    sq = embedding_sq_norms(design, config.q_kernel, vals[:, None])[0]
    value = r_q * math.sqrt(sq)
    if config.q_center is not None:
        q0 = config.q_center
        shift = design.init.mean(q0) - math.fsum(vals * (design.residuals(q0) + design.rewards)) / design.n
        value += shift if sign == "+" else -shift
    return value


def dual_upper_bound(omega: RkhsFunction, design: BellmanDesign, config: BoundConfig,
                     epsilon: Optional[float] = None, q_radius: Optional[float] = None) -> float:
    eps = bound_epsilon(design, config) if epsilon is None else epsilon
    ev = evaluate_dual([omega], design, _radius(config, q_radius), config.q_kernel, config.q_center)[0]
    return ev.upper(eps)


def dual_lower_bound(omega: RkhsFunction, design: BellmanDesign, config: BoundConfig,
                     epsilon: Optional[float] = None, q_radius: Optional[float] = None) -> float:
    eps = bound_epsilon(design, config) if epsilon is None else epsilon
    ev = evaluate_dual([omega], design, _radius(config, q_radius), config.q_kernel, config.q_center)[0]
    return ev.lower(eps)


def doubly_robust_estimate(q, omega, design: BellmanDesign) -> float:
    """E_d0[q] - (1/n) sum_i w(x_i) Rq(x_i, y_i); ``omega`` may be any callable."""
    w = np.asarray(omega(design.Xu), dtype=float)[design.x_inv]
    return design.init.mean(q) - math.fsum(w * design.residuals(q)) / design.n
