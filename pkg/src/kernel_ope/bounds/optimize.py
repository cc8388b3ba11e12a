"""Minimizing F+ (and maximizing F-) over the density ratio omega.

Both parametrizations use a vector theta with |omega| = |theta| and omega at the
distinct record points equal to Phi @ theta:

* representer: omega = sum_u alpha_u k(., x_u) with K = V diag(lam) V', Phi = V sqrt(lam);
* random features: omega = phi(.) . w / m with Phi = phi(X) / sqrt(m), w = sqrt(m) theta.

The objective is then s g'theta + r_Q sqrt(A + 2 h'theta + theta'H theta) + eps |theta|
with s = +1 for the upper bound and s = -1 for the lower one. The quadratic
form is exact for the representer model; the random-feature model also
expands k~ in random features to keep memory linear in n. Either way the
returned omega is re-evaluated exactly by the caller, so the choice only
affects tightness.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import _kernel_ops
from ..kernels import DENSE_LIMIT, RkhsFunction, gram_matrix, kernel_apply, kernel_quadratic, random_features
from .config import BoundConfig
from .design import BellmanDesign

log = logging.getLogger(__name__)

EIG_CUTOFF = 1e-10


class OptimizationError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


@dataclass
class Surrogate:
    phi: np.ndarray  # (n_u, p): omega(Xu) = phi @ theta
    g: np.ndarray  # weighted reward direction
    A: float
    h: np.ndarray
    H: np.ndarray
    q_radius: float
    epsilon: float
    offset: float = 0.0
    method: str = "representer"
    to_omega: object = None
    exact: bool = True
    socp: Optional[dict] = None

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def quad(self, theta) -> float:
        return self.A + 2.0 * self.h @ theta + theta @ (self.H @ theta)

    def value(self, theta, s: float) -> float:
        """s * (offset + g'theta) + r_Q sqrt(quad) + eps |theta|, the F+/-F- value at theta."""
        return (s * (self.offset + self.g @ theta) + self.q_radius * math.sqrt(max(self.quad(theta), 0.0))
                + self.epsilon * float(np.linalg.norm(theta)))


@dataclass
class OmegaResult:
    omega: RkhsFunction
    theta: np.ndarray
    objective: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    method: str = "representer"
    polished: bool = False
    ray_scale: float = 1.0  # factor from the exact line search, 1 when skipped


def _bellman_gram(design: BellmanDesign, kernel) -> np.ndarray:
    """Dagg K~(P, P) Dagg' over the distinct record points."""
    if len(design.P) <= DENSE_LIMIT:
        KP = gram_matrix(kernel, design.P)
        return design.Dagg @ (design.Dagg @ KP).T
    idx, w = design.padded_rows(design.Dagg)
    return _kernel_ops.sparse_bellman_gram(design.P, idx, w, kernel._inv2h2, kernel._horizon)


def _linear_part(design: BellmanDesign, q_center):
    if q_center is None:
        return 0.0, design.reward_agg
    return design.init.mean(q_center), -(design.S @ design.residuals(q_center))


def representer_surrogate(design: BellmanDesign, config: BoundConfig, q_radius: float,
                          epsilon: float) -> Surrogate:
    Kw = gram_matrix(config.w_kernel, design.Xu)
    lam, V = np.linalg.eigh(Kw)
    keep = lam > EIG_CUTOFF * max(lam.max(), 1.0)
    lam, V = lam[keep], V[:, keep]
    phi = V * np.sqrt(lam)
    n = design.n
    offset, lin = _linear_part(design, config.q_center)
    g = phi.T @ lin / n
    v, Z = design.init.weights, design.init.points
    A = float(kernel_quadratic(config.q_kernel, Z, v)) if len(Z) > 1 else float(v @ v)
    E = design.Dagg @ kernel_apply(config.q_kernel, design.P, Z, v)
    G = _bellman_gram(design, config.q_kernel)
    H = phi.T @ G @ phi / n**2
    H = 0.5 * (H + H.T)
    h = -phi.T @ E / n
    anchors = design.Xu
    scale = V / np.sqrt(lam)

    def to_omega(theta):
        return RkhsFunction(config.w_kernel, anchors=anchors, coeffs=scale @ theta)

    return Surrogate(phi=phi, g=g, A=A, h=h, H=H, q_radius=q_radius, epsilon=epsilon, offset=offset,
                     method="representer", to_omega=to_omega, exact=True)


def random_feature_surrogate(design: BellmanDesign, config: BoundConfig, q_radius: float,
                             epsilon: float, seed: int = 0, chunk: int = 2048) -> Surrogate:
    fmap = random_features(config.w_kernel, config.rf_features, design.dim, seed=seed)
    qmap = random_features(config.q_kernel, config.q_rf_features, design.dim, seed=seed + 1)
    mf, mq = fmap.m_features, qmap.m_features
    phi = fmap(design.Xu) / math.sqrt(mf)
    n, m, gamma = design.n, design.m, design.gamma
    offset, lin = _linear_part(design, config.q_center)
    g = phi.T @ lin / n
    M = np.zeros((2 * mq, phi.shape[1]))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        T = qmap(design.X[s:e])
        nxt = qmap(design.Xnext[s:e].reshape(-1, design.dim)).reshape(e - s, m, -1)
        T -= gamma * nxt.mean(axis=1)
        M += T.T @ phi[design.x_inv[s:e]]
    M /= n * math.sqrt(mq)
    ev = qmap(design.init.points).T @ design.init.weights / math.sqrt(mq)
    h = -M.T @ ev
    H = M.T @ M

    def to_omega(theta):
        return RkhsFunction(config.w_kernel, feature_map=fmap, weights=math.sqrt(mf) * theta)

    return Surrogate(phi=phi, g=g, A=float(ev @ ev), h=h, H=H, q_radius=q_radius, epsilon=epsilon,
                     offset=offset, method="random-feature", to_omega=to_omega, exact=False)


def build_surrogate(design: BellmanDesign, config: BoundConfig, q_radius: float, epsilon: float,
                    seed: int = 0) -> Surrogate:
    method = config.omega_method
    if method == "auto":
        method = "representer" if len(design.Xu) <= config.representer_max_n else "random-feature"
    if method == "representer":
        return representer_surrogate(design, config, q_radius, epsilon)
    return random_feature_surrogate(design, config, q_radius, epsilon, seed=seed)


def _group_shrink(x, t):
    nrm = np.linalg.norm(x)
    if nrm <= t:
        return np.zeros_like(x)
    return x * (1.0 - t / nrm)


def fista(sur: Surrogate, s: float, max_iter: int = 500, tol: float = 1e-7, theta0=None):
    """Monotone accelerated proximal gradient with backtracking and restarts.

    The smooth part is s g'theta + r_Q sqrt(quad); the prox handles eps |theta|.
    Returns (theta, trace) where trace holds the objective at every accepted iterate.
    """
    p = sur.dim
    x = np.zeros(p) if theta0 is None else np.asarray(theta0, dtype=float)
    floor = 1e-14 * max(sur.A, 1e-300)

    def smooth(th):
        return s * (sur.g @ th) + sur.q_radius * math.sqrt(max(sur.quad(th), 0.0) + floor)

    def grad(th):
        Hq = sur.H @ th
        qv = sur.A + 2.0 * sur.h @ th + th @ Hq
        return s * sur.g + sur.q_radius * (sur.h + Hq) / math.sqrt(max(qv, 0.0) + floor)

    def total(th):
        return smooth(th) + sur.epsilon * np.linalg.norm(th)

    fx = total(x)
    trace = [fx]
    if not np.isfinite(fx):
        raise OptimizationError("non-finite objective at start", trace)
    hnorm = np.linalg.norm(sur.H, 2) if p else 0.0
    L = max(sur.q_radius * hnorm / math.sqrt(max(sur.A, 1e-12)), 1e-8)
    y, t = x.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gy, fy = grad(y), smooth(y)
        if not (np.all(np.isfinite(gy)) and np.isfinite(fy)):
            raise OptimizationError("non-finite gradient", trace)
        for _ in range(60):
            z = _group_shrink(y - gy / L, sur.epsilon / L)
            d = z - y
            if smooth(z) <= fy + gy @ d + 0.5 * L * (d @ d) + 1e-12 * abs(fy):
                break
            L *= 2.0
        fz = total(z)
        if not np.isfinite(fz):
            raise OptimizationError("non-finite objective (step size diverged)", trace)
        if fz <= fx:
            gain = fx - fz
            x_old, x, fx = x, z, fz
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x + ((t - 1.0) / t_new) * (x - x_old)
            t = t_new
            trace.append(fx)
            if gain <= tol * max(1.0, abs(fx)) and it > 1:
                converged = True
                break
        else:
            # momentum overshot: restart from the best point
            y, t = x.copy(), 1.0
            trace.append(fx)
        L *= 0.95
    return x, trace, it, converged


def socp_polish(design: BellmanDesign, config: BoundConfig, sur: Surrogate, s: float):
    """Solve the representer problem exactly as a second-order cone program.

    Only for small instances; returns theta or None when the solver fails.
    """
    import cvxpy as cp

    Y = design.Y
    lam, V = np.linalg.eigh(gram_matrix(config.q_kernel, Y))
    keep = lam > EIG_CUTOFF * max(lam.max(), 1.0)
    R = V[:, keep] * np.sqrt(lam[keep])  # K~(Y, Y) = R R'
    # coefficients on Y are c0 + Cmat @ theta
    c0 = design.q_side_coefficients(np.zeros(design.n))
    rec_phi = sur.phi[design.x_inv]
    Cmat = design.q_side_coefficients(rec_phi) - c0[:, None]
    a0 = R.T @ c0
    B = R.T @ Cmat
    theta = cp.Variable(sur.dim)
    obj = s * (sur.g @ theta) + sur.q_radius * cp.norm(a0 + B @ theta) + sur.epsilon * cp.norm(theta)
    prob = cp.Problem(cp.Minimize(obj))
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as exc:
        log.warning("SOCP polish failed: %s", exc)
        return None
    if theta.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
        return None
    return np.asarray(theta.value, dtype=float)


POLISH_MAX = 1500


def optimize_omega(design: BellmanDesign, config: BoundConfig, direction: str = "+", seed: int = 0,
                   q_radius: Optional[float] = None, epsilon: Optional[float] = None,
                   surrogate: Optional[Surrogate] = None, line_search: bool = True) -> OmegaResult:
    """omega minimizing F+ (direction '+') or maximizing F- (direction '-').

    An approximate surrogate (random features for Q) can return an omega that is
    worse under exact evaluation; ``line_search`` then rescales it along its ray
    by exact evaluation, so the result never loses to omega = 0.
    """
    from .dual import bound_epsilon, dual_rays

    if direction not in ("+", "-"):
        raise ValueError("direction must be '+' or '-'")
    if surrogate is None:
        r_q = config.q_radius if q_radius is None else q_radius
        if r_q is None:
            raise ValueError("q_radius is unset")
        eps = bound_epsilon(design, config) if epsilon is None else epsilon
        surrogate = build_surrogate(design, config, float(r_q), eps, seed=seed)
    sur = surrogate
    s = 1.0 if direction == "+" else -1.0
    theta, trace, it, conv = fista(sur, s, max_iter=config.max_iter, tol=config.tol)
    polished = False
    if (config.polish and sur.exact and sur.dim <= POLISH_MAX and len(design.Y) <= POLISH_MAX):
        cand = socp_polish(design, config, sur, s)
        if cand is not None and sur.value(cand, s) < sur.value(theta, s):
            theta, polished = cand, True
    obj = sur.value(theta, s)
    omega, scale = sur.to_omega(theta), 1.0
    if line_search and not sur.exact:
        ray = dual_rays([omega], design, sur.q_radius, config.q_kernel, config.q_center)[0]
        scale = ray.best_scale(direction, sur.epsilon)
        obj = ray.objective(scale, direction, sur.epsilon)
        omega, theta = omega.scaled(scale), scale * theta
    return OmegaResult(omega=omega, theta=theta, objective=obj if s > 0 else -obj, trace=trace,
                       iterations=it, converged=conv, method=sur.method, polished=polished, ray_scale=scale)
