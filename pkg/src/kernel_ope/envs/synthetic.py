"""Continuous environment whose Q-function is a known RKHS element.

States and actions are real vectors. Transitions are linear-Gaussian,
``s' = F s + G a + c + noise_std * eps``, and the target policy is Gaussian, so
for the RBF kernel every conditional expectation of q* has a closed form.
Rewards are obtained by inverting the Bellman equation at q*.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..kernels import KernelSpec, RkhsFunction, as_points, rkhs_norm
from .policies import GaussianPolicy


def gaussian_rbf_expectation(mu: np.ndarray, cov: np.ndarray, anchors: np.ndarray, bandwidth: float) -> np.ndarray:
    """E[exp(-|X - z|^2 / (2 h^2))] for X ~ N(mu_i, cov), for every row mu_i and anchor z.

    Returns an array of shape (len(mu), len(anchors)).
    """
    d = mu.shape[1]
    h2 = bandwidth**2
    S = cov + h2 * np.eye(d)
    L = np.linalg.cholesky(S)
    scale = np.sqrt(h2**d / np.linalg.det(S))
    diff = mu[:, None, :] - anchors[None, :, :]
    sol = np.linalg.solve(L, diff.reshape(-1, d).T).T.reshape(diff.shape)
    return scale * np.exp(-0.5 * np.sum(sol**2, axis=-1))


@dataclass(frozen=True)
class SyntheticRkhsEnv:
    q_star: RkhsFunction
    target: GaussianPolicy
    gamma: float
    F: np.ndarray
    G: np.ndarray
    offset: np.ndarray
    noise_std: float
    init_mean: np.ndarray
    init_std: float
    expectation_mc: Optional[int] = None  # None: closed-form expectation in the reward
    reward_seed: int = 0
    name: str = "synthetic-rkhs"
    rho_star: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.q_star.is_feature_form:
            raise ValueError("q_star must be given by anchors and coefficients")
        object.__setattr__(self, "rho_star", rkhs_norm(self.q_star))

    @property
    def kind(self) -> str:
        return "synthetic"

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def action_dim(self) -> int:
        return self.G.shape[1]

    @property
    def r_max(self) -> float:
        """A valid bound on |r|: |r| <= (1 + gamma) sup|q*| and sup|q*| <= min(rho*, sum|alpha|)."""
        sup_q = min(self.rho_star, float(np.sum(np.abs(self.q_star.coeffs))))
        return (1.0 + self.gamma) * sup_q

    def features(self, states, actions) -> np.ndarray:
        """x = (s, a); leading shapes of ``states`` and ``actions`` must agree."""
        return np.concatenate([np.asarray(states, dtype=float), np.asarray(actions, dtype=float)], axis=-1)

    def _split(self, X):
        X = as_points(X)
        return X[:, :self.state_dim], X[:, self.state_dim:]

    # -- dynamics ---------------------------------------------------------
    def next_state_mean(self, states, actions) -> np.ndarray:
        S = np.asarray(states, dtype=float).reshape(-1, self.state_dim)
        A = np.asarray(actions, dtype=float).reshape(-1, self.action_dim)
        return S @ self.F.T + A @ self.G.T + self.offset

    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.init_mean + self.init_std * rng.standard_normal((n, self.state_dim))

    def step(self, states, actions, rng: np.random.Generator):
        mean = self.next_state_mean(states, actions)
        nxt = mean + self.noise_std * rng.standard_normal(mean.shape)
        return self.reward(states, actions), nxt

    # -- closed-form Gaussian expectations --------------------------------
    def _joint(self, state_mean: np.ndarray, state_std: float, pi: GaussianPolicy):
        """Mean rows and shared covariance of x = (s, a) with s ~ N(state_mean, std^2 I), a ~ pi(.|s)."""
        W = pi.weight
        ds = self.state_dim
        mu = np.concatenate([state_mean, state_mean @ W.T + pi.bias], axis=1)
        v = state_std**2
        cov = np.zeros((ds + pi.action_dim, ds + pi.action_dim))
        cov[:ds, :ds] = v * np.eye(ds)
        cov[ds:, :ds] = v * W
        cov[:ds, ds:] = v * W.T
        cov[ds:, ds:] = v * W @ W.T + pi.std**2 * np.eye(pi.action_dim)
        return mu, cov

    def _expect_rkhs(self, f: RkhsFunction, mu: np.ndarray, cov: np.ndarray) -> np.ndarray:
        if f.is_feature_form or f.kernel.time_horizon is not None:
            raise TypeError("closed form needs an anchor-form RBF function without time truncation")
        return gaussian_rbf_expectation(mu, cov, f.anchors, f.kernel.bandwidth) @ f.coeffs

    def expected_next_q(self, q, states, actions, pi: Optional[GaussianPolicy] = None,
                        mc: int = 4096, seed: int = 0) -> np.ndarray:
        """E[q(s', a') | s, a] with a' ~ pi(.|s'); exact for anchor-form RKHS q, Monte Carlo otherwise."""
        pi = self.target if pi is None else pi
        m = self.next_state_mean(states, actions)
        if isinstance(q, RkhsFunction) and not q.is_feature_form and q.kernel.time_horizon is None:
            mu, cov = self._joint(m, self.noise_std, pi)
            return self._expect_rkhs(q, mu, cov)
        rng = np.random.default_rng(seed)
        acc = np.zeros(len(m))
        for _ in range(mc):
            s1 = m + self.noise_std * rng.standard_normal(m.shape)
            acc += q(self.features(s1, pi.sample(s1, rng)))
        return acc / mc

    def true_value(self) -> float:
        """J* = E_{x ~ d_{pi,0}}[q*(x)], in closed form."""
        mu, cov = self._joint(self.init_mean[None, :], self.init_std, self.target)
        return float(self._expect_rkhs(self.q_star, mu, cov)[0])

    # -- rewards ----------------------------------------------------------
    def reward(self, states, actions) -> np.ndarray:
        S = np.asarray(states, dtype=float).reshape(-1, self.state_dim)
        A = np.asarray(actions, dtype=float).reshape(-1, self.action_dim)
        return derive_reward(self, self.features(S, A))

    mean_reward = reward

    def initial_sample(self, pi: Optional[GaussianPolicy] = None, n_mc: int = 2048, seed: int = 0):
        from ..bounds.design import InitialSample

        pi = self.target if pi is None else pi
        rng = np.random.default_rng(seed)
        s0 = self.reset(n_mc, rng)
        X = self.features(s0, pi.sample(s0, rng))
        return InitialSample(X, np.full(n_mc, 1.0 / n_mc))

    def to_dict(self) -> dict:
        return {"kind": "synthetic", "name": self.name, "gamma": self.gamma, "rho_star": self.rho_star,
                "q_star": self.q_star.to_dict(), "target": self.target.to_dict()}


def _point_seed(x: np.ndarray, base: int) -> int:
    return zlib.crc32(np.ascontiguousarray(x, dtype=np.float64).tobytes(), base & 0xFFFFFFFF)


def derive_reward(env: SyntheticRkhsEnv, X) -> np.ndarray:
    """r(x) = q*(x) - gamma * E[q*(x') | x].

    With ``env.expectation_mc`` unset the expectation is exact; otherwise it is
    a Monte Carlo mean with a seed fixed by the bytes of x, so r stays a pure
    function of x.
    """
    X = as_points(X)
    S, A = env._split(X)
    q_now = env.q_star(X)
    if env.expectation_mc is None:
        return q_now - env.gamma * env.expected_next_q(env.q_star, S, A)
    out = np.empty(len(X))
    mean = env.next_state_mean(S, A)
    for i in range(len(X)):
        rng = np.random.default_rng(_point_seed(X[i], env.reward_seed))
        s1 = mean[i] + env.noise_std * rng.standard_normal((env.expectation_mc, env.state_dim))
        a1 = env.target.sample(s1, rng)
        out[i] = q_now[i] - env.gamma * np.mean(env.q_star(env.features(s1, a1)))
    return out


def make_synthetic_env(seed: int = 0, state_dim: int = 1, action_dim: int = 1, n_anchors: int = 12,
                       q_bandwidth: float = 0.7, gamma: float = 0.9, target_temperature: float = 0.1,
                       coeff_scale: float = 1.0, noise_std: float = 0.3, init_std: float = 0.5,
                       expectation_mc: Optional[int] = None, name: str = "synthetic-rkhs") -> SyntheticRkhsEnv:
    """A linear-Gaussian environment with q* = sum_j alpha_j k(., z_j)."""
    rng = np.random.default_rng(seed)
    F = 0.6 * np.eye(state_dim)
    G = 0.3 * np.ones((state_dim, action_dim)) / np.sqrt(action_dim)
    W = -0.5 * np.ones((action_dim, state_dim)) / np.sqrt(state_dim)
    target = GaussianPolicy(W, np.zeros(action_dim), scale=1.0, temperature=target_temperature)
    s = 0.5 * rng.standard_normal((n_anchors, state_dim))
    a = s @ W.T + 0.5 * rng.standard_normal((n_anchors, action_dim))
    kernel = KernelSpec(q_bandwidth)
    q_star = RkhsFunction(kernel, anchors=np.hstack([s, a]),
                          coeffs=coeff_scale * rng.standard_normal(n_anchors))
    return SyntheticRkhsEnv(q_star=q_star, target=target, gamma=gamma, F=F, G=G,
                            offset=np.zeros(state_dim), noise_std=noise_std,
                            init_mean=np.zeros(state_dim), init_std=init_std,
                            expectation_mc=expectation_mc, reward_seed=seed, name=name)
