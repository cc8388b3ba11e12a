from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..bellman import ConcentrationParams, c_qk_bound, concentration_radius
from ..kernels import KernelSpec, RkhsFunction


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BoundConfig:
    """Function classes and budgets for the confidence interval.

    W is the unit ball of ``w_kernel``; Q is the ball of radius ``q_radius`` in
    the RKHS of ``q_kernel``, centred at ``q_center`` (zero when unset, which
    makes Q symmetric). ``q_radius=None`` selects the radius from the data as
    ``radius_factor`` times the norm of a fitted q.
    """

    w_kernel: KernelSpec
    q_kernel: KernelSpec
    q_radius: Optional[float] = None
    delta: float = 0.1
    m: int = 5
    d0_mc: int = 2048
    omega_method: str = "auto"
    rf_features: int = 512
    q_rf_features: int = 512
    representer_max_n: int = 2000
    r_max: Optional[float] = None
    q_center: Optional[RkhsFunction] = None
    radius_factor: float = 10.0
    max_iter: int = 500
    tol: float = 1e-7
    polish: bool = True

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if self.q_radius is not None and not self.q_radius > 0:
            raise ConfigError("q_radius must be positive")
        if self.m < 1 or self.d0_mc < 1 or self.rf_features < 1:
            raise ConfigError("m, d0_mc and rf_features must be positive")
        if self.omega_method not in ("auto", "representer", "random-feature"):
            raise ConfigError(f"unknown omega_method {self.omega_method!r}")

    @property
    def symmetric_q(self) -> bool:
        return self.q_center is None

    def with_(self, **kw) -> "BoundConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return BoundConfig(**d)

    def epsilon(self, n: int, gamma: float, r_max: float) -> float:
        params = ConcentrationParams(r_max=r_max, k_max=self.w_kernel.k_max, gamma=gamma, delta=self.delta)
        return concentration_radius(c_qk_bound(params), self.delta, n)

    def to_dict(self) -> dict:
        return {"w_kernel": self.w_kernel.to_dict(), "q_kernel": self.q_kernel.to_dict(),
                "q_radius": self.q_radius, "delta": self.delta, "m": self.m, "d0_mc": self.d0_mc,
                "omega_method": self.omega_method, "rf_features": self.rf_features,
                "q_rf_features": self.q_rf_features, "representer_max_n": self.representer_max_n,
                "r_max": self.r_max, "radius_factor": self.radius_factor, "max_iter": self.max_iter,
                "tol": self.tol, "polish": self.polish,
                "q_center": None if self.q_center is None else self.q_center.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundConfig":
        d = dict(d)
        try:
            d["w_kernel"] = KernelSpec.from_dict(d["w_kernel"])
            d["q_kernel"] = KernelSpec.from_dict(d["q_kernel"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad kernel spec: {exc}") from exc
        if d.get("q_center") is not None:
            d["q_center"] = RkhsFunction.from_dict(d["q_center"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown bound config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    delta: float
    epsilon_n: float
    n: int
    diagnostics: dict = field(default_factory=dict)
    state: object = field(default=None, repr=False, compare=False)  # omegas, for re-evaluation

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "delta": self.delta, "epsilon_n": self.epsilon_n,
                "n": self.n, "diagnostics": dict(self.diagnostics)}
