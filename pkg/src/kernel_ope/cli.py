"""Command line entry point: simulate, bound, baseline, test-q, experiment."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .baselines import BaselineError, TrajectorySet, is_hoeffding_interval
from .bounds import (BellmanDesign, ConfigError, InconclusiveError, OptimizationError, confidence_interval,
                     hypothesis_test_q, make_problem)
from .envs import Dataset, DatasetError, augment_next_actions, collect_transitions
from .experiments import ExperimentConfig, bound_config, build_setup, emit_csv, run_experiment
from .kernels import KernelError

EXIT_OK, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("kernel_ope")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _write(obj, path):
    text = json.dumps(obj, indent=2, default=_json_default)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _setup(cfg):
    if "env" not in cfg:
        raise ConfigError("config needs an 'env' block")
    return build_setup(cfg["env"], cfg.get("behavior", {}), cfg.get("bound", {}).get("q_bandwidth"))


def _load_data(args):
    if not args.data:
        raise ConfigError("--data is required")
    try:
        return Dataset.load(args.data)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read dataset {args.data}: {exc}") from exc


def cmd_simulate(args):
    cfg = _load_json(args.config)
    setup = _setup(cfg)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    n = int(cfg.get("n", 1000))
    m = int(cfg.get("bound", {}).get("m", cfg.get("m", 5)))
    ss = np.random.SeedSequence(seed).generate_state(2)
    data = collect_transitions(setup.env, setup.behavior, n, setup.traj_len, seed=int(ss[0]))
    data = augment_next_actions(data, setup.target, m, seed=int(ss[1]))
    data.meta["j_true"] = setup.j_true
    out = args.out or "dataset.json"
    data.save(out)
    log.info("wrote %d records to %s", len(data), out)
    return EXIT_OK


def cmd_bound(args):
    cfg = _load_json(args.config)
    setup = _setup(cfg)
    bc = bound_config(cfg.get("bound", {}), setup)
    data = _load_data(args)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    ss = np.random.SeedSequence(seed).generate_state(2)
    problem = make_problem(setup.env, setup.target, data, d0_mc=bc.d0_mc, seed=int(ss[0]))
    ci = confidence_interval(BellmanDesign(data, problem), bc, seed=int(ss[1]))
    _write(ci.to_dict(), args.out)
    return EXIT_INCONCLUSIVE if ci.diagnostics.get("empty") else EXIT_OK


def cmd_baseline(args):
    cfg = _load_json(args.config)
    setup = _setup(cfg)
    data = _load_data(args)
    bcfg = cfg.get("baseline", {})
    trajs = TrajectorySet.from_dataset(data, setup.behavior, setup.target)
    iv = is_hoeffding_interval(trajs, setup.env.gamma, float(bcfg.get("delta", 0.1)),
                               weight_cap=float(bcfg.get("weight_cap", 1e3)), r_max=float(setup.env.r_max))
    _write(iv.to_dict(), args.out)
    return EXIT_OK


def cmd_test_q(args):
    cfg = _load_json(args.config)
    setup = _setup(cfg)
    bc = bound_config(cfg.get("bound", {}), setup)
    if bc.q_radius is None:
        raise ConfigError("test-q needs q_radius or q_radius_factor")
    data = _load_data(args)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    problem = make_problem(setup.env, setup.target, data, d0_mc=bc.d0_mc, seed=seed)
    res = hypothesis_test_q(BellmanDesign(data, problem), bc)
    _write(res.to_dict(), args.out)
    return EXIT_INCONCLUSIVE if res.decision == "inconclusive" else EXIT_OK


def cmd_experiment(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = args.out or cfg.output or f"{cfg.name}.csv"
    rows, summary = run_experiment(cfg, threads=args.threads)
    emit_csv(rows, out)
    _write(summary, out + ".summary.json")
    log.info("wrote %d rows to %s", len(rows), out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kernel-ope", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in [("simulate", cmd_simulate, "collect a dataset and write it as JSON"),
                               ("bound", cmd_bound, "confidence interval for a dataset"),
                               ("baseline", cmd_baseline, "IS point estimate and Hoeffding interval"),
                               ("test-q", cmd_test_q, "test whether q* can lie in the Q ball"),
                               ("experiment", cmd_experiment, "run an experiment config to CSV")]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--threads", type=int, default=None)
        if name in ("bound", "baseline", "test-q"):
            sp.add_argument("--data", help="dataset JSON written by simulate")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, BaselineError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (OptimizationError, KernelError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
