"""Kernel-loss confidence intervals for behavior-agnostic off-policy evaluation."""

from .bellman import (ConcentrationParams, ResidualVector, c_qk_bound, concentration_radius, empirical_residual,
                      expected_residuals, kernel_bellman_loss, residuals, semi_expected_kbl, v_statistic)
from .kernels import (KernelError, KernelSpec, RandomFeatureMap, RkhsFunction, gram_matrix, median_bandwidth,
                      random_features, rkhs_norm)

__version__ = "0.1.0"
