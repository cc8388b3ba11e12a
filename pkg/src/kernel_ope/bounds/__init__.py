from .config import BoundConfig, ConfidenceInterval, ConfigError
from .design import BellmanDesign, InitialSample, Problem, base_next_states, make_problem
from .dual import (DualEvaluation, DualRay, dual_rays, bound_epsilon, doubly_robust_estimate, dual_lower_bound, dual_upper_bound,
                   embedding_sq_norms, evaluate_dual, iq_loss, omega_on_records)
from .interval import IntervalState, confidence_interval, interval_at_delta, solve_interval
from .optimize import OmegaResult, OptimizationError, Surrogate, build_surrogate, fista, optimize_omega
from .primal import (HypothesisResult, InconclusiveError, PrimalResult, fit_q_hat, hypothesis_test_q,
                     primal_bound_oracle, q_span, select_q_radius)
