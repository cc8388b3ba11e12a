"""Q-side problems over the representer span of k~ on the design points.

Every q enters through its values on Y = P u Z and its norm. Writing
K~(Y, Y) = R R' gives q(Y) = R eta with |q| = |eta| for q in the span, and by
the representer argument nothing outside the span can do better. The
kernel Bellman loss becomes |B eta - b| / n with B = Lw' Dagg R_P and
b = Lw' S r, where K(Xu, Xu) = Lw Lw'.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..bellman import kernel_bellman_loss
from ..kernels import RkhsFunction, gram_matrix, rkhs_norm
from .config import BoundConfig
from .design import BellmanDesign, Problem
from .dual import bound_epsilon

log = logging.getLogger(__name__)

EIG_CUTOFF = 1e-12
PRIMAL_MAX_N = 500


class InconclusiveError(RuntimeError):
    pass


def _psd_factor(K: np.ndarray):
    lam, V = np.linalg.eigh(K)
    keep = lam > EIG_CUTOFF * max(lam.max(), 1.0)
    return V[:, keep], lam[keep]


@dataclass
class QSpan:
    """Linear maps from eta to the quantities a q-problem needs."""

    design: BellmanDesign
    kernel: object
    R: np.ndarray  # q(Y) = R eta
    V: np.ndarray
    lam: np.ndarray
    B: np.ndarray  # Lw' Dagg R_P
    b: np.ndarray  # Lw' S (r - D q0(P))
    d0_row: np.ndarray  # E_d0[q] = d0_row @ eta
    base: float  # E_d0[q0]
    q_center: Optional[RkhsFunction] = None

    def to_q(self, eta) -> RkhsFunction:
        coeffs = (self.V / np.sqrt(self.lam)) @ eta
        return RkhsFunction(self.kernel, anchors=self.design.Y, coeffs=coeffs)

    def loss(self, eta) -> float:
        return float(np.linalg.norm(self.B @ eta - self.b)) / self.design.n


def q_span(design: BellmanDesign, config: BoundConfig) -> QSpan:
    V, lam = _psd_factor(gram_matrix(config.q_kernel, design.Y))
    R = V * np.sqrt(lam)
    Vw, lw = _psd_factor(gram_matrix(config.w_kernel, design.Xu))
    Lw = Vw * np.sqrt(lw)
    RP = R[design.p_to_y]
    B = Lw.T @ (design.Dagg @ RP)
    if config.q_center is None:
        shifted, base = design.reward_agg, 0.0
    else:
        shifted, base = -(design.S @ design.residuals(config.q_center)), design.init.mean(config.q_center)
    b = Lw.T @ shifted
    d0_row = design.init.weights @ R[design.z_to_y]
    return QSpan(design, config.q_kernel, R, V, lam, B, b, d0_row, base, config.q_center)


@dataclass
class PrimalResult:
    value: float
    status: str
    q: Optional[RkhsFunction] = None
    loss: float = float("nan")
    norm: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def primal_bound_oracle(design: BellmanDesign, config: BoundConfig, direction: str = "+",
                        epsilon: Optional[float] = None, q_radius: Optional[float] = None,
                        feas_tol: float = 1e-6) -> PrimalResult:
    """sup (direction '+') or inf ('-') of E_d0[q] over q in Q with L_W(q) <= eps.

    Solved as a second-order cone program; the solution is then re-checked
    against both constraints from scratch.
    """
    import cvxpy as cp

    if design.n > PRIMAL_MAX_N:
        raise ValueError(f"primal oracle is meant for n <= {PRIMAL_MAX_N}")
    eps = bound_epsilon(design, config) if epsilon is None else float(epsilon)
    r_q = config.q_radius if q_radius is None else q_radius
    if r_q is None:
        raise ValueError("q_radius is unset")
    span = q_span(design, config)
    s = 1.0 if direction == "+" else -1.0
    eta = cp.Variable(len(span.lam))
    cons = [cp.norm(eta) <= r_q]
    if np.isfinite(eps):
        cons.append(cp.norm(span.B @ eta - span.b) <= design.n * eps)
    prob = cp.Problem(cp.Maximize(s * (span.d0_row @ eta)), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as exc:
        return PrimalResult(float("nan"), "solver_error", diagnostics={"message": str(exc)})
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        return PrimalResult(float("nan"), "infeasible",
                            diagnostics={"message": "epsilon is below the smallest loss in the Q ball"})
    if eta.value is None:
        return PrimalResult(float("nan"), prob.status)
    e = np.asarray(eta.value, dtype=float)
    value = span.base + float(span.d0_row @ e)
    q = span.to_q(e)
    full_q = q if config.q_center is None else _Shifted(q, config.q_center)
    loss = kernel_bellman_loss(full_q, design, config.w_kernel)
    norm = rkhs_norm(q)
    ok = norm <= r_q * (1 + feas_tol) + feas_tol and (not np.isfinite(eps) or loss <= eps * (1 + feas_tol) + feas_tol)
    status = "optimal" if ok else "feasibility_check_failed"
    return PrimalResult(value, status, q=q, loss=loss, norm=norm,
                        diagnostics={"solver_status": prob.status, "epsilon": eps, "q_radius": r_q})


class _Shifted:
    def __init__(self, q, q0):
        self.q, self.q0 = q, q0

    def __call__(self, X):
        return self.q(X) + self.q0(X)


def _trust_region_ls(B, b, radius):
    """min |B x - b| subject to |x| <= radius, via the SVD of B.

    Returns (x, residual_norm).
    """
    U, sig, Wt = np.linalg.svd(B, full_matrices=False)
    tol = sig.max() * max(B.shape) * np.finfo(float).eps if sig.size else 0.0
    keep = sig > tol
    U, sig, Wt = U[:, keep], sig[keep], Wt[keep]
    beta = U.T @ b
    out_sq = max(float(b @ b - beta @ beta), 0.0)

    def x_of(lmb):
        return Wt.T @ (sig * beta / (sig**2 + lmb))

    def res(lmb):
        return math.sqrt(float(np.sum((lmb / (sig**2 + lmb) * beta) ** 2)) + out_sq)

    x0 = x_of(0.0)
    if np.linalg.norm(x0) <= radius:
        return x0, res(0.0)
    # |x(lambda)| decreases in lambda; bisect in log space for |x| = radius
    hi = max(float(np.linalg.norm(sig * beta)) / radius, 1e-300)
    while np.linalg.norm(x_of(hi)) > radius:
        hi *= 2.0
    lo = hi * 1e-30
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if np.linalg.norm(x_of(mid)) > radius:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    return x_of(hi), res(hi)


@dataclass
class HypothesisResult:
    decision: str  # accept, reject or inconclusive
    statistic: float
    epsilon: float
    q_min: Optional[RkhsFunction] = None

    def to_dict(self) -> dict:
        return {"decision": self.decision, "statistic": self.statistic, "epsilon": self.epsilon}


def hypothesis_test_q(design: BellmanDesign, config: BoundConfig, epsilon: Optional[float] = None,
                      q_radius: Optional[float] = None) -> HypothesisResult:
    """Reject 'q* in Q' iff min over Q of L_W(q) >= eps; false rejections have probability <= delta."""
    eps = bound_epsilon(design, config) if epsilon is None else float(epsilon)
    r_q = config.q_radius if q_radius is None else q_radius
    if r_q is None:
        raise ValueError("q_radius is unset")
    if not np.isfinite(eps):
        return HypothesisResult("accept", float("nan"), eps)
    try:
        span = q_span(design, config)
        eta, res = _trust_region_ls(span.B, span.b, r_q)
    except np.linalg.LinAlgError as exc:
        log.warning("hypothesis test failed: %s", exc)
        return HypothesisResult("inconclusive", float("nan"), eps)
    stat = res / design.n
    if not np.isfinite(stat):
        return HypothesisResult("inconclusive", stat, eps)
    return HypothesisResult("reject" if stat >= eps else "accept", stat, eps, span.to_q(eta))


def fit_q_hat(design: BellmanDesign, config: BoundConfig, target_loss: float) -> RkhsFunction:
    """The smallest-norm q in the span with L_W(q) <= target_loss, or the loss minimizer if none."""
    span = q_span(design, config)
    B, b = span.B, span.b
    U, sig, Wt = np.linalg.svd(B, full_matrices=False)
    keep = sig > sig.max() * max(B.shape) * np.finfo(float).eps
    U, sig, Wt = U[:, keep], sig[keep], Wt[keep]
    beta = U.T @ b
    out_sq = max(float(b @ b - beta @ beta), 0.0)
    goal = design.n * target_loss

    def res(lmb):
        return math.sqrt(float(np.sum((lmb / (sig**2 + lmb) * beta) ** 2)) + out_sq)

    def x_of(lmb):
        return Wt.T @ (sig * beta / (sig**2 + lmb))

    if res(0.0) >= goal:
        return span.to_q(x_of(0.0))
    if np.linalg.norm(b) <= goal:
        return span.to_q(np.zeros(len(span.lam)))
    lo, hi = 1e-30 * max(sig.max() ** 2, 1e-300), sig.max() ** 2 + 1.0
    while res(hi) < goal:
        hi *= 2.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if res(mid) < goal:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    return span.to_q(x_of(lo))


def select_q_radius(dataset, problem: Problem, config: BoundConfig, max_records: int = PRIMAL_MAX_N,
                    fit_fraction: float = 0.1) -> tuple:
    """r_Q = radius_factor * |q_hat| with q_hat a small-loss fit on a prefix of the data.

    Returns (r_Q, q_hat).
    """
    sub = dataset.subset(min(len(dataset), max_records))
    design = BellmanDesign(sub, problem)
    eps = bound_epsilon(design, config)
    q_hat = fit_q_hat(design, config, fit_fraction * eps)
    norm = rkhs_norm(q_hat)
    if norm <= 0:
        raise InconclusiveError("fitted q has zero norm; give q_radius explicitly")
    return config.radius_factor * norm, q_hat
