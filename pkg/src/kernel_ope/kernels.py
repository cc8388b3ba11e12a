"""Gaussian RBF kernels, RKHS function representations and random features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernel_ops

JITTER = 1e-8
NEG_TOL = 1e-8
# above this many points Gram products go through the compiled loops
DENSE_LIMIT = 3000


class KernelError(ValueError):
    pass


def as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise KernelError(f"points must be 2-d, got shape {X.shape}")
    return np.ascontiguousarray(X)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel ``exp(-|x - y|^2 / (2 h^2))``.

    When ``time_horizon`` is set, the last coordinate of every point is a
    timestep and the kernel is zero whenever either timestep is >= horizon.
    """

    bandwidth: float
    family: str = "rbf"
    time_horizon: Optional[float] = None

    def __post_init__(self):
        if self.family != "rbf":
            raise KernelError(f"unsupported kernel family {self.family!r}")
        if not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise KernelError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def k_max(self) -> float:
        return 1.0

    @property
    def _inv2h2(self) -> float:
        return 0.5 / self.bandwidth**2

    @property
    def _horizon(self) -> float:
        return _kernel_ops.NO_HORIZON if self.time_horizon is None else float(self.time_horizon)

    def __call__(self, X, Y) -> np.ndarray:
        return gram_matrix(self, X, Y)

    def alive(self, X) -> np.ndarray:
        """Mask of points where the kernel is not truncated."""
        X = as_points(X)
        if self.time_horizon is None:
            return np.ones(len(X), dtype=bool)
        return X[:, -1] < self.time_horizon

    def to_dict(self) -> dict:
        return {"family": self.family, "bandwidth": self.bandwidth, "time_horizon": self.time_horizon}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(bandwidth=float(d["bandwidth"]), family=d.get("family", "rbf"),
                   time_horizon=d.get("time_horizon"))


def gram_matrix(kernel: KernelSpec, X, Y=None) -> np.ndarray:
    X = as_points(X)
    Y = X if Y is None else as_points(Y)
    if X.shape[1] != Y.shape[1]:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    out = np.empty((len(X), len(Y)))
    block = max(1, 4_000_000 // max(1, len(Y) * X.shape[1]))
    for s in range(0, len(X), block):
        diff = X[s:s + block, None, :] - Y[None, :, :]
        out[s:s + block] = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) * kernel._inv2h2)
    if kernel.time_horizon is not None:
        out *= np.outer(kernel.alive(X), kernel.alive(Y))
    return out


def kernel_quadratic(kernel: KernelSpec, X, C) -> np.ndarray:
    """``C.T K(X, X) C`` for a coefficient vector or matrix ``C``.

    Dense for small point sets, a compiled symmetric loop otherwise.
    """
    X = as_points(X)
    C = np.asarray(C, dtype=float)
    vec = C.ndim == 1
    C2 = np.ascontiguousarray(C[:, None] if vec else C)
    if len(X) <= DENSE_LIMIT:
        out = C2.T @ (gram_matrix(kernel, X) @ C2)
        out = 0.5 * (out + out.T)
    else:
        out = _kernel_ops.quadratic_gram(X, C2, kernel._inv2h2, kernel._horizon)
    return out[0, 0] if vec else out


def kernel_sq_norms(kernel: KernelSpec, X, C) -> np.ndarray:
    """diag(C.T K(X, X) C), each column computed on its own.

    A column's value does not depend on which other columns share the call, so
    batched and single evaluations agree bit for bit.
    """
    X = as_points(X)
    C2 = np.ascontiguousarray(np.asarray(C, dtype=float).reshape(len(X), -1))
    if len(X) > DENSE_LIMIT:
        return np.diag(_kernel_ops.quadratic_gram(X, C2, kernel._inv2h2, kernel._horizon)).copy()
    K = gram_matrix(kernel, X)
    return np.array([math.fsum(c * (K @ c)) for c in C2.T])


def kernel_apply(kernel: KernelSpec, X, Y, C) -> np.ndarray:
    """``K(X, Y) @ C`` without holding the full matrix for large inputs."""
    X, Y = as_points(X), as_points(Y)
    C = np.asarray(C, dtype=float)
    vec = C.ndim == 1
    C2 = np.ascontiguousarray(C[:, None] if vec else C)
    if len(X) * len(Y) <= DENSE_LIMIT**2:
        out = gram_matrix(kernel, X, Y) @ C2
    else:
        out = _kernel_ops.kernel_matvec(X, Y, C2, kernel._inv2h2, kernel._horizon)
    return out[:, 0] if vec else out


def merge_duplicates(X, C):
    """Collapse repeated rows of ``X``, summing the matching rows of ``C``.

    The RKHS element sum_i C_i k(., x_i) is unchanged.
    """
    X = as_points(X)
    C = np.asarray(C, dtype=float)
    U, inv = np.unique(X, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    if len(U) == len(X):
        return X, C
    out = np.zeros((len(U),) + C.shape[1:])
    np.add.at(out, inv, C)
    return np.ascontiguousarray(U), out


def _clamped_sqrt(sq: float, what: str) -> float:
    if sq < -NEG_TOL:
        raise KernelError(f"negative quadratic form {sq:.3e} in {what}")
    return float(np.sqrt(max(sq, 0.0)))


@dataclass(frozen=True)
class RandomFeatureMap:
    """Paired cosine/sine random Fourier features for the RBF kernel.

    With frequencies b_1..b_m the map is phi(x) = (cos(b_i.x), sin(b_i.x))_i and
    phi(x).phi(y) / m = (1/m) sum_i cos(b_i.(x - y)), so phi(x).phi(x) / m == 1.
    """

    kernel: KernelSpec
    frequencies: np.ndarray  # (dim, m)

    @property
    def m_features(self) -> int:
        return self.frequencies.shape[1]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[0]

    def __call__(self, X) -> np.ndarray:
        X = as_points(X)
        proj = X @ self.frequencies
        phi = np.concatenate([np.cos(proj), np.sin(proj)], axis=1)
        if self.kernel.time_horizon is not None:
            phi *= self.kernel.alive(X)[:, None]
        return phi

    def approx_kernel(self, X, Y) -> np.ndarray:
        return self(X) @ self(Y).T / self.m_features


def random_features(kernel: KernelSpec, m_features: int, dim: int, seed: int = 0) -> RandomFeatureMap:
    if m_features < 1:
        raise KernelError("m_features must be >= 1")
    if kernel.family != "rbf":
        raise KernelError("random features need a known spectral density")
    rng = np.random.default_rng(seed)
    freq = rng.standard_normal((dim, m_features)) / kernel.bandwidth
    return RandomFeatureMap(kernel, freq)


@dataclass(frozen=True)
class RkhsFunction:
    """f = sum_i coeffs[i] k(., anchors[i])  or  f = phi(.) . weights / m."""

    kernel: KernelSpec
    anchors: Optional[np.ndarray] = None
    coeffs: Optional[np.ndarray] = None
    feature_map: Optional[RandomFeatureMap] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        anchor_form = self.anchors is not None and self.coeffs is not None
        feature_form = self.feature_map is not None and self.weights is not None
        if anchor_form == feature_form:
            raise KernelError("give exactly one of (anchors, coeffs) or (feature_map, weights)")
        if anchor_form:
            object.__setattr__(self, "anchors", as_points(self.anchors))
            object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(-1))
            if len(self.anchors) != len(self.coeffs):
                raise KernelError("anchors and coeffs differ in length")
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if len(w) != 2 * self.feature_map.m_features:
                raise KernelError("weights must have 2 * m_features entries")
            object.__setattr__(self, "weights", w)

    @classmethod
    def zero(cls, kernel: KernelSpec, dim: int) -> "RkhsFunction":
        return cls(kernel, anchors=np.zeros((1, dim)), coeffs=np.zeros(1))

    @property
    def is_feature_form(self) -> bool:
        return self.feature_map is not None

    def __call__(self, X) -> np.ndarray:
        if self.is_feature_form:
            return self.feature_map(X) @ self.weights / self.feature_map.m_features
        return kernel_apply(self.kernel, X, self.anchors, self.coeffs)

    def scaled(self, c: float) -> "RkhsFunction":
        if self.is_feature_form:
            return RkhsFunction(self.kernel, feature_map=self.feature_map, weights=c * self.weights)
        return RkhsFunction(self.kernel, anchors=self.anchors, coeffs=c * self.coeffs)

    def to_dict(self) -> dict:
        if self.is_feature_form:
            return {"kernel": self.kernel.to_dict(),
                    "frequencies": self.feature_map.frequencies.tolist(),
                    "weights": self.weights.tolist()}
        return {"kernel": self.kernel.to_dict(), "anchors": self.anchors.tolist(),
                "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RkhsFunction":
        kernel = KernelSpec.from_dict(d["kernel"])
        if "weights" in d:
            fmap = RandomFeatureMap(kernel, np.asarray(d["frequencies"], dtype=float))
            return cls(kernel, feature_map=fmap, weights=d["weights"])
        return cls(kernel, anchors=d["anchors"], coeffs=d["coeffs"])


def rkhs_norm(f: RkhsFunction) -> float:
    if f.is_feature_form:
        return float(np.sqrt(np.sum(f.weights**2) / f.feature_map.m_features))
    X, c = merge_duplicates(f.anchors, f.coeffs)
    return _clamped_sqrt(kernel_quadratic(f.kernel, X, c), "rkhs_norm")


def median_bandwidth(X, max_points: int = 2000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance over a subsample of at most ``max_points``."""
    X = as_points(X)
    if len(X) > max_points:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(len(X), max_points, replace=False))]
    if len(X) < 2:
        raise KernelError("need at least two points")
    iu = np.triu_indices(len(X), k=1)
    d = np.sqrt(np.maximum(np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1), 0.0))[iu]
    med = float(np.median(d))
    if med <= 0:
        if np.all(d == 0):
            raise KernelError("all points identical")
        med = float(np.median(d[d > 0]))
    return med
