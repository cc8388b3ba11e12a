"""Finite MDPs with exact policy evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .policies import TabularPolicy


class MDPError(ValueError):
    pass


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray  # P[s, a, s']
    reward_mean: np.ndarray  # R[s, a]
    gamma: float
    initial_dist: np.ndarray
    reward_noise_std: float = 0.0
    r_max: float | None = None
    name: str = "tabular"
    # E[r | s, a] after noise and clipping; equals reward_mean when noise is off
    expected_reward: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward_mean, dtype=float)
        d0 = np.asarray(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise MDPError(f"inconsistent shapes P{P.shape} R{R.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise MDPError("transition rows must sum to 1")
        if d0.shape != (P.shape[0],) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > 1e-12:
            raise MDPError("initial_dist must be a distribution over states")
        if not 0.0 < self.gamma < 1.0:
            raise MDPError("gamma must lie in (0, 1)")
        if self.reward_noise_std < 0:
            raise MDPError("reward_noise_std must be nonnegative")
        r_max = float(np.max(np.abs(R))) if self.r_max is None else float(self.r_max)
        if np.any(np.abs(R) > r_max + 1e-12):
            raise MDPError("|reward_mean| exceeds r_max")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_mean", R)
        object.__setattr__(self, "initial_dist", d0)
        object.__setattr__(self, "r_max", r_max)
        object.__setattr__(self, "expected_reward", _clipped_normal_mean(R, self.reward_noise_std, r_max))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def kind(self) -> str:
        return "tabular"

    # -- simulation -------------------------------------------------------
    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return _sample_rows(np.broadcast_to(self.initial_dist, (n, self.n_states)), rng)

    def step(self, states, actions, rng: np.random.Generator):
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        next_states = _sample_rows(self.transition[states, actions], rng)
        rewards = self.reward_mean[states, actions].copy()
        if self.reward_noise_std > 0:
            rewards += self.reward_noise_std * rng.standard_normal(len(states))
            np.clip(rewards, -self.r_max, self.r_max, out=rewards)
        return rewards, next_states

    # -- kernels see one-hot(s) ++ one-hot(a) -----------------------------
    def features(self, states, actions) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        X = np.zeros(states.shape + (self.n_states + self.n_actions,))
        np.put_along_axis(X, states[..., None], 1.0, axis=-1)
        np.put_along_axis(X, self.n_states + actions[..., None], 1.0, axis=-1)
        return X

    def decode(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X)
        return np.argmax(X[..., :self.n_states], axis=-1), np.argmax(X[..., self.n_states:self.n_states + self.n_actions], axis=-1)

    # -- ground truth -----------------------------------------------------
    def policy_matrices(self, pi: TabularPolicy):
        probs = pi.action_probs()
        P_pi = np.einsum("sa,sat->st", probs, self.transition)
        r_pi = np.sum(probs * self.expected_reward, axis=1)
        return P_pi, r_pi

    def q_values(self, pi: TabularPolicy) -> np.ndarray:
        v = state_values(self, pi)
        return self.expected_reward + self.gamma * self.transition @ v

    def initial_sample(self, pi: TabularPolicy):
        """d_{pi,0} enumerated exactly: every (s, a) with weight d0(s) pi(a|s)."""
        from ..bounds.design import InitialSample

        w = self.initial_dist[:, None] * pi.action_probs()
        s, a = np.nonzero(w > 0)
        return InitialSample(self.features(s, a), w[s, a])

    def expected_next_q(self, q, states, actions, pi: TabularPolicy) -> np.ndarray:
        """E[q(s', a') | s, a] with s' ~ P(.|s, a) and a' ~ pi(.|s')."""
        table = q_table(self, q)
        v = np.sum(pi.action_probs() * table, axis=1)
        return self.transition[np.asarray(states, dtype=int), np.asarray(actions, dtype=int)] @ v

    def mean_reward(self, states, actions) -> np.ndarray:
        return self.expected_reward[np.asarray(states, dtype=int), np.asarray(actions, dtype=int)]

    def to_dict(self) -> dict:
        return {"kind": "tabular", "name": self.name, "transition": self.transition.tolist(),
                "reward_mean": self.reward_mean.tolist(), "gamma": self.gamma,
                "initial_dist": self.initial_dist.tolist(),
                "reward_noise_std": self.reward_noise_std, "r_max": self.r_max}


def _clipped_normal_mean(mu: np.ndarray, sigma: float, bound: float) -> np.ndarray:
    """E[clip(mu + sigma Z, -bound, bound)] for standard normal Z."""
    if sigma == 0:
        return mu.copy()
    a, b = (-bound - mu) / sigma, (bound - mu) / sigma
    Fa, Fb = norm.cdf(a), norm.cdf(b)
    return -bound * Fa + bound * norm.sf(b) + mu * (Fb - Fa) + sigma * (norm.pdf(a) - norm.pdf(b))


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((len(probs), 1))
    return (u >= cdf).sum(axis=1)


def q_table(mdp: TabularMDP, q) -> np.ndarray:
    """Values of ``q`` on the full (S, A) grid; ``q`` is a table or a callable on features."""
    if isinstance(q, np.ndarray):
        return q
    s, a = np.meshgrid(np.arange(mdp.n_states), np.arange(mdp.n_actions), indexing="ij")
    return np.asarray(q(mdp.features(s.ravel(), a.ravel())), dtype=float).reshape(s.shape)


class TabularQ:
    """A table q[s, a] evaluated on one-hot features."""

    def __init__(self, mdp: TabularMDP, table):
        self.mdp = mdp
        self.table = np.asarray(table, dtype=float)

    def __call__(self, X) -> np.ndarray:
        s, a = self.mdp.decode(X)
        return self.table[s, a]


def state_values(mdp: TabularMDP, pi: TabularPolicy) -> np.ndarray:
    P_pi, r_pi = mdp.policy_matrices(pi)
    M = np.eye(mdp.n_states) - mdp.gamma * P_pi
    if np.linalg.cond(M) > 1e12:
        raise MDPError("policy evaluation system is singular")
    return np.linalg.solve(M, r_pi)


def exact_value(mdp: TabularMDP, pi: TabularPolicy) -> float:
    """J = d0' (I - gamma P_pi)^{-1} r_pi."""
    return float(mdp.initial_dist @ state_values(mdp, pi))


def iterate_value(mdp: TabularMDP, pi: TabularPolicy, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Same quantity by repeated Bellman backups; used as a cross-check."""
    P_pi, r_pi = mdp.policy_matrices(pi)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        v_new = r_pi + mdp.gamma * P_pi @ v
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    return float(mdp.initial_dist @ v)


def random_mdp(n_states: int, n_actions: int, gamma: float, seed: int = 0,
               reward_noise_std: float = 0.0, r_max: float = 1.0, concentration: float = 1.0,
               name: str = "random") -> TabularMDP:
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    R = rng.uniform(0.0, r_max, size=(n_states, n_actions))
    d0 = rng.dirichlet(np.ones(n_states))
    return TabularMDP(P, R, gamma, d0, reward_noise_std=reward_noise_std, r_max=r_max, name=name)


def random_softmax_policy(n_states: int, n_actions: int, temperature: float = 1.0, seed: int = 0) -> TabularPolicy:
    rng = np.random.default_rng(seed)
    return TabularPolicy(rng.standard_normal((n_states, n_actions)), temperature)


def augment_mdp_with_time(mdp: TabularMDP, pi: TabularPolicy, horizon: int):
    """Embed an H-step problem into an infinite-horizon one on states (s, t).

    State index ``t * S + s`` for t < H; a single absorbing zero-reward state
    stands for every t >= H.
    """
    S, A, H = mdp.n_states, mdp.n_actions, horizon
    n = S * H + 1
    end = S * H
    P = np.zeros((n, A, n))
    R = np.zeros((n, A))
    for t in range(H):
        blk = slice(t * S, (t + 1) * S)
        R[blk] = mdp.reward_mean
        if t + 1 < H:
            P[blk, :, (t + 1) * S:(t + 2) * S] = mdp.transition
        else:
            P[blk, :, end] = 1.0
    P[end, :, end] = 1.0
    d0 = np.zeros(n)
    d0[:S] = mdp.initial_dist
    aug = TabularMDP(P, R, mdp.gamma, d0, reward_noise_std=mdp.reward_noise_std, r_max=mdp.r_max,
                     name=f"{mdp.name}-H{H}")
    logits = np.vstack([np.tile(pi.logits, (H, 1)), np.zeros((1, A))])
    return aug, TabularPolicy(logits, pi.temperature)


def finite_horizon_value(mdp: TabularMDP, pi: TabularPolicy, horizon: int) -> float:
    """Backward induction for sum_{t<H} gamma^t r_t."""
    P_pi, r_pi = mdp.policy_matrices(pi)
    v = np.zeros(mdp.n_states)
    for _ in range(horizon):
        v = r_pi + mdp.gamma * P_pi @ v
    return float(mdp.initial_dist @ v)


def tabular_q_norm(mdp: TabularMDP, table, kernel) -> float:
    """RKHS norm of the function equal to ``table`` on the S*A feature points.

    The RBF Gram over distinct one-hot points is nonsingular, so every table is
    interpolated exactly by sum_x c_x k(., x) with |q|^2 = t' K^{-1} t.
    """
    from ..kernels import gram_matrix

    s, a = np.meshgrid(np.arange(mdp.n_states), np.arange(mdp.n_actions), indexing="ij")
    X = mdp.features(s.ravel(), a.ravel())
    t = np.asarray(table, dtype=float).ravel()
    c = np.linalg.solve(gram_matrix(kernel, X), t)
    return float(np.sqrt(max(t @ c, 0.0)))
