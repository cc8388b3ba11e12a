"""The confidence interval: optimize omega both ways, then evaluate exactly."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import BoundConfig, ConfidenceInterval
from .design import BellmanDesign
from .dual import DualEvaluation, bound_epsilon, dual_rays, evaluate_dual
from .optimize import build_surrogate, optimize_omega


@dataclass
class IntervalState:
    """Everything needed to re-evaluate the interval at another epsilon without re-optimizing."""

    plus: DualEvaluation
    minus: DualEvaluation
    omega_plus: object
    omega_minus: object
    q_radius: float

    def interval(self, epsilon: float, delta: float, n: int, diagnostics: Optional[dict] = None) -> ConfidenceInterval:
        lower, upper = self.minus.lower(epsilon), self.plus.upper(epsilon)
        diag = {"iq_plus": self.plus.iq_plus, "iq_minus": self.minus.iq_minus,
                "omega_plus_norm": self.plus.omega_norm, "omega_minus_norm": self.minus.omega_norm,
                "reward_term_plus": self.plus.linear, "reward_term_minus": self.minus.linear,
                "point_estimate": 0.5 * (lower + upper), "q_radius": self.q_radius,
                "empty": bool(lower > upper)}
        diag.update(diagnostics or {})
        return ConfidenceInterval(lower=lower, upper=upper, delta=delta, epsilon_n=epsilon, n=n, diagnostics=diag,
                                  state=self)


def solve_interval(design: BellmanDesign, config: BoundConfig, q_radius: float, seed: int = 0,
                   epsilon: Optional[float] = None):
    """Optimize omega+ and omega-, then re-evaluate both from scratch. Returns (IntervalState, info)."""
    eps = bound_epsilon(design, config) if epsilon is None else epsilon
    t0 = time.perf_counter()
    sur = build_surrogate(design, config, q_radius, eps, seed=seed)
    res_p = optimize_omega(design, config, "+", seed=seed, surrogate=sur, line_search=False)
    res_m = optimize_omega(design, config, "-", seed=seed, surrogate=sur, line_search=False)
    t1 = time.perf_counter()
    om_p, om_m = res_p.omega, res_m.omega
    scales = (1.0, 1.0)
    if sur.exact:
        ev_p, ev_m = evaluate_dual([om_p, om_m], design, q_radius, config.q_kernel, config.q_center)
    else:
        # exact line search along both rays in the same single Gram pass
        ray_p, ray_m = dual_rays([om_p, om_m], design, q_radius, config.q_kernel, config.q_center)
        scales = (ray_p.best_scale("+", eps), ray_m.best_scale("-", eps))
        ev_p, ev_m = ray_p.at(scales[0]), ray_m.at(scales[1])
        om_p, om_m = om_p.scaled(scales[0]), om_m.scaled(scales[1])
    t2 = time.perf_counter()
    info = {"method": res_p.method, "iterations_plus": res_p.iterations, "iterations_minus": res_m.iterations,
            "converged_plus": res_p.converged, "converged_minus": res_m.converged,
            "surrogate_upper": res_p.objective, "surrogate_lower": res_m.objective,
            "trace_plus": [float(v) for v in res_p.trace], "trace_minus": [-float(v) for v in res_m.trace],
            "ray_scale_plus": scales[0], "ray_scale_minus": scales[1],
            "optimize_seconds": t1 - t0, "evaluate_seconds": t2 - t1}
    return IntervalState(ev_p, ev_m, om_p, om_m, q_radius), info


def confidence_interval(design: BellmanDesign, config: BoundConfig, seed: int = 0,
                        q_radius: Optional[float] = None) -> ConfidenceInterval:
    """[F-(omega-), F+(omega+)] with both endpoints evaluated exactly at the returned omegas."""
    from .primal import select_q_radius

    r_q = q_radius if q_radius is not None else config.q_radius
    extra = {}
    if r_q is None:
        r_q, q_hat = select_q_radius(design.dataset, design.problem, config)
        extra["q_radius_source"] = "fitted"
    eps = bound_epsilon(design, config)
    state, info = solve_interval(design, config, float(r_q), seed=seed, epsilon=eps)
    info.update(extra)
    ci = state.interval(eps, config.delta, design.n, info)
    return ci


def interval_at_delta(state: IntervalState, design: BellmanDesign, config: BoundConfig,
                      delta: float) -> ConfidenceInterval:
    """The interval for another delta with the same omegas; only epsilon changes."""
    cfg = config.with_(delta=delta)
    eps = bound_epsilon(design, cfg)
    return state.interval(eps, delta, design.n)


def interval_length(ci: ConfidenceInterval) -> float:
    return float(np.subtract(ci.upper, ci.lower))
