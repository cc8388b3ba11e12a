"""Target and behavior policies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class PolicyError(ValueError):
    pass


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TabularPolicy:
    """pi(a|s) = softmax(logits[s] / temperature)."""

    logits: np.ndarray
    temperature: float = 1.0
    kind: str = field(default="tabular-softmax", init=False)

    def __post_init__(self):
        if not self.temperature > 0:
            raise PolicyError("temperature must be positive")
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=float))

    @classmethod
    def from_probs(cls, probs) -> "TabularPolicy":
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-12):
            raise PolicyError("rows of probs must be distributions")
        with np.errstate(divide="ignore"):
            return cls(np.log(probs))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls.from_probs(probs)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def action_probs(self, states=None) -> np.ndarray:
        probs = _softmax(self.logits / self.temperature)
        return probs if states is None else probs[np.asarray(states, dtype=int)]

    def prob(self, states, actions) -> np.ndarray:
        return self.action_probs()[np.asarray(states, dtype=int), np.asarray(actions, dtype=int)]

    def sample(self, states, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """One action per state, or ``size`` actions per state (shape (n, size))."""
        probs = self.action_probs(states)
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = 1.0
        k = 1 if size is None else size
        u = rng.random((len(probs), k))
        out = np.empty((len(probs), k), dtype=np.int64)
        for j in range(k):
            out[:, j] = (u[:, j:j + 1] >= cdf).sum(axis=1)
        return out[:, 0] if size is None else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "probs": self.action_probs().tolist()}


@dataclass(frozen=True)
class GaussianPolicy:
    """pi(a|s) proportional to exp(f(s, a) / temperature) with f(s, a) = -|a - W s - b|^2 / (2 scale^2).

    That is a ~ N(W s + b, temperature * scale^2 I).
    """

    weight: np.ndarray  # (action_dim, state_dim)
    bias: np.ndarray
    scale: float = 1.0
    temperature: float = 1.0
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        if not self.temperature > 0:
            raise PolicyError("temperature must be positive")
        object.__setattr__(self, "weight", np.atleast_2d(np.asarray(self.weight, dtype=float)))
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=float).reshape(-1))

    @property
    def action_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def std(self) -> float:
        return float(np.sqrt(self.temperature) * self.scale)

    def with_temperature(self, temperature: float) -> "GaussianPolicy":
        return GaussianPolicy(self.weight, self.bias, self.scale, temperature)

    def mean(self, states) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=float))
        return S @ self.weight.T + self.bias

    def prob(self, states, actions) -> np.ndarray:
        mu = self.mean(states)
        A = np.asarray(actions, dtype=float).reshape(mu.shape)
        var = self.std**2
        z = np.sum((A - mu) ** 2, axis=1) / var
        return np.exp(-0.5 * z) / (2 * np.pi * var) ** (self.action_dim / 2)

    def sample(self, states, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        mu = self.mean(states)
        if size is None:
            return mu + self.std * rng.standard_normal(mu.shape)
        return mu[:, None, :] + self.std * rng.standard_normal((mu.shape[0], size, mu.shape[1]))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weight": self.weight.tolist(), "bias": self.bias.tolist(),
                "scale": self.scale, "temperature": self.temperature}


@dataclass(frozen=True)
class MixturePolicy:
    """Draw from ``policies[k]`` with probability ``weights[k]``."""

    policies: tuple
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.policies) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise PolicyError("mixture weights must be a distribution over the policies")
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @property
    def kind(self) -> str:
        return self.policies[0].kind

    def action_probs(self, states=None) -> np.ndarray:
        return sum(w * p.action_probs(states) for w, p in zip(self.weights, self.policies))

    def prob(self, states, actions) -> np.ndarray:
        return sum(w * p.prob(states, actions) for w, p in zip(self.weights, self.policies))

    def sample(self, states, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = len(np.atleast_1d(states)) if self.kind == "tabular-softmax" else len(np.atleast_2d(states))
        k = 1 if size is None else size
        comp = rng.choice(len(self.policies), size=(n, k), p=self.weights)
        draws = [p.sample(states, rng, size=k) for p in self.policies]
        out = draws[0].copy()
        for c in range(1, len(self.policies)):
            out[comp == c] = draws[c][comp == c]
        return out[:, 0] if size is None else out

    def to_dict(self) -> dict:
        return {"kind": "mixture", "weights": list(self.weights),
                "policies": [p.to_dict() for p in self.policies]}


def mixture(target, base, alpha: float) -> MixturePolicy:
    """pi_alpha = alpha * target + (1 - alpha) * base."""
    if not 0.0 <= alpha <= 1.0:
        raise PolicyError("alpha must lie in [0, 1]")
    return MixturePolicy((target, base), (alpha, 1.0 - alpha))


def mixture_schedule(target, base, alphas: Sequence[float]) -> list:
    """Per-trajectory behavior policies, used round-robin by the collector."""
    return [mixture(target, base, a) for a in alphas]
