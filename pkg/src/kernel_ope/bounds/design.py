"""Kernel-ready view of a transition dataset.

All bound computations are phrased on three point sets:

* the record points x_i (for W-side quantities, merged where they repeat),
* the Q-side points P = unique{x_i} + unique{x'_il},
* a weighted sample of d_{pi,0} (exact enumeration for tabular problems).

The empirical Bellman residual of q is D q(P) - r, with D the sparse operator
D[i, x_i] += 1, D[i, x'_il] -= gamma / m.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ..envs.dataset import Dataset, DatasetError, _base_states, featurizer
from ..kernels import as_points


@dataclass(frozen=True)
class InitialSample:
    """Weighted points standing for d_{pi,0}; weights sum to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.points) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("initial sample weights must be a distribution")
        object.__setattr__(self, "weights", w)

    def mean(self, f) -> float:
        return float(self.weights @ np.asarray(f(self.points), dtype=float))

    def with_time(self, t0: float = 0.0) -> "InitialSample":
        return InitialSample(np.hstack([self.points, np.full((len(self.points), 1), t0)]), self.weights)


@dataclass(frozen=True)
class Problem:
    """What the algorithm knows besides the data: gamma, features, d_{pi,0}, reward bound."""

    gamma: float
    features: Callable
    init: InitialSample
    r_max: float


def make_problem(env, pi, dataset: Dataset | None = None, d0_mc: int = 2048, seed: int = 0) -> Problem:
    if env.kind == "tabular":
        init = env.initial_sample(pi)
    else:
        init = env.initial_sample(pi, n_mc=d0_mc, seed=seed)
    feats = env.features
    if dataset is not None and dataset.time_horizon is not None:
        init = init.with_time(0.0)
        feats = featurizer(env, dataset)
    return Problem(env.gamma, feats, init, float(env.r_max))


def _unique(X):
    U, inv = np.unique(X, axis=0, return_inverse=True)
    return np.ascontiguousarray(U), inv.reshape(-1)


class BellmanDesign:
    def __init__(self, dataset: Dataset, problem: Problem):
        if len(dataset) == 0:
            raise DatasetError("empty dataset")
        if dataset.next_actions is None:
            raise DatasetError("dataset has no next actions; call augment_next_actions first")
        self.dataset = dataset
        self.problem = problem
        self.gamma = problem.gamma
        self.n = len(dataset)
        self.m = dataset.m
        self.rewards = np.asarray(dataset.rewards, dtype=float)
        self.init = problem.init

        X = as_points(problem.features(dataset.states, dataset.actions))
        rep = np.repeat(np.asarray(dataset.next_states)[:, None], self.m, axis=1)
        Xn = np.asarray(problem.features(rep, dataset.next_actions), dtype=float)
        self.X = X
        self.Xnext = Xn.reshape(self.n, self.m, X.shape[1])
        self.dim = X.shape[1]

        # W side: merged record points, S aggregates records onto them
        self.Xu, self.x_inv = _unique(X)
        self.S = sp.csr_matrix((np.ones(self.n), (self.x_inv, np.arange(self.n))), shape=(len(self.Xu), self.n))

        # Q side
        allp = np.vstack([X, self.Xnext.reshape(-1, self.dim)])
        self.P, inv = _unique(allp)
        x_idx = inv[:self.n]
        nxt_idx = inv[self.n:].reshape(self.n, self.m)
        rows = np.concatenate([np.arange(self.n), np.repeat(np.arange(self.n), self.m)])
        cols = np.concatenate([x_idx, nxt_idx.ravel()])
        vals = np.concatenate([np.ones(self.n), np.full(self.n * self.m, -self.gamma / self.m)])
        self.D = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, len(self.P)))
        self.D.sum_duplicates()
        self.Dagg = (self.S @ self.D).tocsr()
        self.Dagg.sum_duplicates()
        self.reward_agg = self.S @ self.rewards

        # Q side plus the initial sample, for the mean-embedding norm
        self.Y, yinv = _unique(np.vstack([self.P, self.init.points]))
        self.p_to_y = yinv[:len(self.P)]
        self.z_to_y = yinv[len(self.P):]

    def residuals(self, q) -> np.ndarray:
        """R q(x_i, y_i) = q(x_i) - gamma/m sum_l q(x'_il) - r_i for a callable q."""
        qP = np.asarray(q(self.P), dtype=float)
        return self.D @ qP - self.rewards

    def q_side_coefficients(self, omega_values: np.ndarray) -> np.ndarray:
        """Coefficients on Y of the embedding sum_j v_j phi(z_j) - (1/n) sum_i omega_i D_i phi(P).

        ``omega_values`` holds omega(x_i) for every record (vector) or several omegas (columns).
        """
        W = np.asarray(omega_values, dtype=float)
        vec = W.ndim == 1
        W2 = W[:, None] if vec else W
        C = np.zeros((len(self.Y), W2.shape[1]))
        np.add.at(C, self.p_to_y, -(self.D.T @ W2) / self.n)
        np.add.at(C, self.z_to_y, np.broadcast_to(self.init.weights[:, None], (len(self.z_to_y), W2.shape[1])))
        return C[:, 0] if vec else C

    def padded_rows(self, M: sp.csr_matrix):
        """Fixed-width (idx, weight) arrays for the rows of a sparse matrix."""
        M = M.tocsr()
        counts = np.diff(M.indptr)
        width = max(1, int(counts.max()))
        idx = np.zeros((M.shape[0], width), dtype=np.int64)
        w = np.zeros((M.shape[0], width))
        for i in range(M.shape[0]):
            s, e = M.indptr[i], M.indptr[i + 1]
            idx[i, :e - s] = M.indices[s:e]
            w[i, :e - s] = M.data[s:e]
        return idx, w


def base_next_states(dataset: Dataset):
    return _base_states(dataset.next_states, dataset)
