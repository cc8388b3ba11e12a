"""Seeded experiment drivers and CSV output.

An experiment config is a JSON object::

    {"name": "coverage-synthetic", "kind": "coverage" | "length" | "delta_sweep",
     "env": {...}, "behavior": {...}, "n_grid": [...], "deltas": [...],
     "trials": 50, "bound": {...}, "baselines": {"is": false, "weight_cap": 1000},
     "master_seed": 0, "output": "results.csv", "record_timing": false, "threads": 1}

See README.md for the env, behavior and bound blocks.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .baselines import TrajectorySet, is_hoeffding_interval
from .bounds import BellmanDesign, BoundConfig, ConfigError, confidence_interval, interval_at_delta, make_problem
from .envs import (augment_next_actions, collect_transitions, exact_value, make_synthetic_env, mixture_schedule,
                   random_mdp, random_softmax_policy, tabular_q_norm)
from .kernels import KernelSpec

log = logging.getLogger(__name__)

CSV_HEADER = ["experiment", "trial_seed", "n", "delta", "method", "lower", "upper", "point", "j_true", "covered",
              "wall_time_ms"]
KINDS = ("coverage", "length", "delta_sweep")


# -- environments ---------------------------------------------------------
@dataclass
class Setup:
    env: object
    target: object
    behavior: list
    j_true: float
    rho_star: float
    q_kernel: KernelSpec
    traj_len: int


_SYNTH_KEYS = {"seed", "state_dim", "action_dim", "n_anchors", "q_bandwidth", "gamma", "target_temperature",
               "coeff_scale", "noise_std", "init_std", "expectation_mc", "name"}


def build_setup(env_spec: dict, behavior_spec: dict, q_bandwidth: Optional[float] = None) -> Setup:
    """Environment, target policy, behavior schedule and ground truth from config blocks."""
    spec = dict(env_spec)
    kind = spec.pop("kind", None)
    traj_len = int(behavior_spec.get("traj_len", 50))
    if kind == "synthetic":
        unknown = set(spec) - _SYNTH_KEYS
        if unknown:
            raise ConfigError(f"unknown synthetic env keys {sorted(unknown)}")
        env = make_synthetic_env(**spec)
        target = env.target
        if "alphas" in behavior_spec:
            base = target.with_temperature(float(behavior_spec.get("base_temperature", 1.0)))
            behavior = mixture_schedule(target, base, behavior_spec["alphas"])
        else:
            behavior = [target.with_temperature(float(t)) for t in behavior_spec.get("temperatures", [1.0])]
        return Setup(env, target, behavior, env.true_value(), env.rho_star, env.q_star.kernel, traj_len)
    if kind == "tabular":
        try:
            S, A = int(spec["n_states"]), int(spec["n_actions"])
        except KeyError as exc:
            raise ConfigError(f"tabular env needs {exc}") from exc
        seed = int(spec.get("seed", 0))
        env = random_mdp(S, A, float(spec.get("gamma", 0.9)), seed=seed,
                         reward_noise_std=float(spec.get("reward_noise_std", 0.0)),
                         r_max=float(spec.get("r_max", 1.0)), concentration=float(spec.get("concentration", 1.0)))
        target = random_softmax_policy(S, A, float(spec.get("target_temperature", 1.0)), seed=seed + 1)
        base = random_softmax_policy(S, A, float(behavior_spec.get("base_temperature", 1.0)), seed=seed + 2)
        behavior = mixture_schedule(target, base, behavior_spec.get("alphas", [0.0]))
        qk = KernelSpec(1.0 if q_bandwidth is None else q_bandwidth)
        rho = tabular_q_norm(env, env.q_values(target), qk)
        return Setup(env, target, behavior, exact_value(env, target), rho, qk, traj_len)
    raise ConfigError(f"unknown env kind {kind!r}")


_BOUND_PASS = {"delta", "m", "d0_mc", "omega_method", "rf_features", "q_rf_features", "representer_max_n",
               "r_max", "radius_factor", "max_iter", "tol", "polish"}


def bound_config(spec: dict, setup: Setup) -> BoundConfig:
    """BoundConfig from a bound block; q_radius may be absolute or a multiple of |q*|."""
    spec = dict(spec)
    unknown = set(spec) - _BOUND_PASS - {"w_bandwidth", "q_bandwidth", "q_radius", "q_radius_factor",
                                         "time_horizon"}
    if unknown:
        raise ConfigError(f"unknown bound keys {sorted(unknown)}")
    qk = setup.q_kernel if spec.get("q_bandwidth") is None else KernelSpec(float(spec["q_bandwidth"]))
    wk = KernelSpec(float(spec.get("w_bandwidth", 1.0)))
    r_q = spec.get("q_radius")
    if r_q is None and spec.get("q_radius_factor") is not None:
        r_q = float(spec["q_radius_factor"]) * setup.rho_star
    kw = {k: spec[k] for k in _BOUND_PASS if k in spec}
    return BoundConfig(w_kernel=wk, q_kernel=qk, q_radius=r_q, **kw)


# -- config and rows ------------------------------------------------------
@dataclass
class ExperimentConfig:
    name: str
    kind: str
    env: dict
    behavior: dict
    n_grid: list
    deltas: list = field(default_factory=lambda: [0.1])
    trials: int = 1
    bound: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)
    master_seed: int = 0
    output: Optional[str] = None
    record_timing: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])) or self.n_grid[0] < 1:
            raise ConfigError("n_grid must be strictly increasing positive integers")
        if not self.deltas or any(not 0 < d < 1 for d in self.deltas):
            raise ConfigError("deltas must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown experiment keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ResultRow:
    experiment: str
    trial_seed: int
    n: int
    delta: float
    method: str
    lower: float
    upper: float
    point: float
    j_true: float
    covered: bool
    wall_time_ms: Optional[float] = None
    error: Optional[str] = None

    @property
    def length(self) -> float:
        return self.upper - self.lower


def trial_seed(master_seed: int, experiment: str, trial: int) -> int:
    """Seed for one trial: a hash of (master seed, experiment id, trial index)."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(experiment.encode()), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _row(cfg, seed, n, delta, method, lower, upper, point, j_true, ms, error=None):
    return ResultRow(cfg.name, seed, n, float(delta), method, float(lower), float(upper), float(point),
                     float(j_true), covered_flag(lower, upper, j_true), ms if cfg.record_timing else None, error)


def _failed(cfg, seed, n, delta, method, j_true, exc):
    log.warning("trial %s n=%s delta=%s %s failed: %s", seed, n, delta, method, exc)
    nan = float("nan")
    return _row(cfg, seed, n, delta, method, nan, nan, nan, j_true, None, f"{type(exc).__name__}: {exc}")


def run_trial(cfg: ExperimentConfig, trial: int) -> list:
    """All rows of one trial: every n in the grid, every delta, every method."""
    setup = build_setup(cfg.env, cfg.behavior, cfg.bound.get("q_bandwidth"))
    bc = bound_config(cfg.bound, setup)
    seed = trial_seed(cfg.master_seed, cfg.name, trial)
    s_data, s_next, s_d0, s_rf = (int(x) for x in np.random.SeedSequence(seed).generate_state(4))
    data = collect_transitions(setup.env, setup.behavior, max(cfg.n_grid), setup.traj_len, seed=s_data)
    data = augment_next_actions(data, setup.target, bc.m, seed=s_next)
    problem = make_problem(setup.env, setup.target, data, d0_mc=bc.d0_mc, seed=s_d0)
    deltas = sorted(cfg.deltas)
    j = setup.j_true
    rows = []
    for n in cfg.n_grid:
        sub = data.subset(n)
        try:
            design = BellmanDesign(sub, problem)
        except Exception as exc:  # recorded per row, never fatal
            rows += [_failed(cfg, seed, n, d, "kernel", j, exc) for d in deltas]
            continue
        if cfg.kind == "delta_sweep":
            t0 = time.perf_counter()
            try:
                ref = confidence_interval(design, bc.with_(delta=deltas[0]), seed=s_rf)
                ms = (time.perf_counter() - t0) * 1e3
                for d in deltas:
                    ci = interval_at_delta(ref.state, design, bc, d)
                    rows.append(_row(cfg, seed, n, d, "kernel", ci.lower, ci.upper,
                                     ci.diagnostics["point_estimate"], j, ms))
            except Exception as exc:
                rows += [_failed(cfg, seed, n, d, "kernel", j, exc) for d in deltas]
        else:
            for d in deltas:
                t0 = time.perf_counter()
                try:
                    ci = confidence_interval(design, bc.with_(delta=d), seed=s_rf)
                    rows.append(_row(cfg, seed, n, d, "kernel", ci.lower, ci.upper,
                                     ci.diagnostics["point_estimate"], j, (time.perf_counter() - t0) * 1e3))
                except Exception as exc:
                    rows.append(_failed(cfg, seed, n, d, "kernel", j, exc))
        if cfg.baselines.get("is"):
            for d in deltas:
                t0 = time.perf_counter()
                try:
                    trajs = TrajectorySet.from_dataset(sub, setup.behavior, setup.target)
                    iv = is_hoeffding_interval(trajs, setup.env.gamma, d,
                                               weight_cap=float(cfg.baselines.get("weight_cap", 1e3)),
                                               r_max=float(setup.env.r_max))
                    rows.append(_row(cfg, seed, n, d, "is-hoeffding", iv.lower, iv.upper, iv.estimate, j,
                                     (time.perf_counter() - t0) * 1e3))
                except Exception as exc:
                    rows.append(_failed(cfg, seed, n, d, "is-hoeffding", j, exc))
    return rows


def _run_packed(args):
    return run_trial(*args)


def run_rows(cfg: ExperimentConfig, threads: Optional[int] = None) -> list:
    """Rows ordered by (n, delta, method, trial) whatever the number of workers."""
    k = cfg.threads if threads is None else threads
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if k > 1:
        with ProcessPoolExecutor(max_workers=k) as pool:
            per_trial = list(pool.map(_run_packed, jobs))
    else:
        per_trial = [run_trial(*j) for j in jobs]
    order = {}
    for t, rows in enumerate(per_trial):
        for r in rows:
            order.setdefault((r.n, r.delta, r.method), []).append((t, r))
    cells = sorted(order, key=lambda c: (c[0], c[1], c[2]))
    return [r for c in cells for _, r in sorted(order[c], key=lambda x: x[0])]


# -- drivers --------------------------------------------------------------
def failure_rates(rows: list) -> dict:
    """Empirical failure rate 1 - coverage per (method, n, delta) cell."""
    cells = {}
    for r in rows:
        cells.setdefault((r.method, r.n, r.delta), []).append(r.covered)
    return {k: 1.0 - float(np.mean(v)) for k, v in cells.items()}


def run_coverage(cfg: ExperimentConfig, threads: Optional[int] = None):
    """Returns (rows, {(method, n, delta): failure rate})."""
    rows = run_rows(cfg, threads)
    return rows, failure_rates(rows)


def fit_slope(ns, lengths) -> float:
    """Least-squares slope of log(length) against log(n)."""
    ns = np.asarray(ns, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    if len(ns) < 2 or len(np.unique(ns)) < 2:
        raise ConfigError("need at least two distinct n")
    if np.any(lengths <= 0) or not np.all(np.isfinite(lengths)):
        raise ValueError("lengths must be positive and finite")
    x = np.log(ns) - np.mean(np.log(ns))
    y = np.log(lengths)
    return float(np.sum(x * (y - y.mean())) / np.sum(x * x))


def median_lengths(rows: list, method: str = "kernel") -> tuple:
    ns = sorted({r.n for r in rows if r.method == method})
    med = [float(np.median([r.length for r in rows if r.method == method and r.n == n])) for n in ns]
    return ns, med


def run_length_scaling(cfg: ExperimentConfig, threads: Optional[int] = None):
    """Returns (rows, {"n": [...], "median_length": [...], "slope": s})."""
    if len(cfg.n_grid) < 4:
        raise ConfigError("length scaling needs at least 4 grid points in n")
    rows = run_rows(cfg, threads)
    ns, med = median_lengths(rows)
    return rows, {"n": ns, "median_length": med, "slope": fit_slope(ns, med)}


def run_delta_sweep(cfg: ExperimentConfig, threads: Optional[int] = None):
    """Returns (rows sorted by delta within each n, {"monotone": bool})."""
    if cfg.kind != "delta_sweep":
        cfg = ExperimentConfig(**{**cfg.to_dict(), "kind": "delta_sweep"})
    rows = run_rows(cfg, threads)
    ok = True
    by_trial = {}
    for r in rows:
        if r.method == "kernel":
            by_trial.setdefault((r.trial_seed, r.n), []).append(r)
    for rs in by_trial.values():
        rs = sorted(rs, key=lambda r: r.delta)
        widths = [r.length for r in rs]
        ok &= all(b <= a for a, b in zip(widths, widths[1:]))
    return rows, {"monotone": bool(ok)}


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None):
    if cfg.kind == "coverage":
        rows, rates = run_coverage(cfg, threads)
        return rows, {"failure_rate": {f"{m}|{n}|{d!r}": v for (m, n, d), v in sorted(rates.items())}}
    if cfg.kind == "length":
        return run_length_scaling(cfg, threads)
    return run_delta_sweep(cfg, threads)


# -- CSV ------------------------------------------------------------------
def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def emit_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_HEADER])


def read_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(ResultRow(
                experiment=rec["experiment"], trial_seed=int(rec["trial_seed"]), n=int(rec["n"]),
                delta=float(rec["delta"]), method=rec["method"], lower=float(rec["lower"]),
                upper=float(rec["upper"]), point=float(rec["point"]), j_true=float(rec["j_true"]),
                covered=rec["covered"] == "true",
                wall_time_ms=float(rec["wall_time_ms"]) if rec["wall_time_ms"] else None))
    return out


def covered_flag(lower: float, upper: float, j_true: float) -> bool:
    return bool(math.isfinite(lower) and math.isfinite(upper) and lower <= j_true <= upper)
