"""Command-line entry point: ``ctrltune {tune,evaluate,landscape,compare}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
Outputs go under ``$CTRLTUNE_OUT`` (default ``./runs``) unless a path is given.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .analysis import compare, landscape
from .config import ExperimentConfig, apply_overrides, load_config
from .core import NonFiniteStateError, evaluate
from .critic import CriticDivergence
from .params import ConfigError, ParamSpace
from .runlog import (
    TIMING_SCHEMA,
    CheckpointError,
    CsvLog,
    curve_columns,
    load_checkpoint,
    read_curve,
    save_checkpoint,
    write_summary,
)
from .tasks import get_task
from .zoac import IterationFailure, TuneResult, es_baseline, tune

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "CTRLTUNE_OUT"

log = logging.getLogger("ctrltune")


def out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _run_dir(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    if override:
        return Path(override)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return out_root() / (cfg.name or f"{cfg.task}-{cfg.method}")


def _checkpoint_meta(cfg: ExperimentConfig, seed: int, space: ParamSpace, result: TuneResult) -> dict:
    meta = {
        "task": cfg.task,
        "method": cfg.method,
        "seed": seed,
        "experiment": cfg.to_dict(),
        "space": space.to_config(),
        "best_eval": result.best_eval,
        "env_steps": result.env_steps,
    }
    if result.critic is not None:
        meta["critic"] = {"obs_dim": result.critic.obs_dim, "hidden": list(result.critic.sizes[1:-1])}
    return meta


def cmd_tune(args) -> int:
    cfg = load_config(args.config, args.set)
    run_dir = _run_dir(cfg, args.out)
    task = cfg.build_task()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    curves = []
    for seed in cfg.seeds:
        algo = cfg.algorithm_config(task, seed)
        seed_dir = run_dir / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        runner = tune if cfg.method == "zoac" else es_baseline
        curve = CsvLog(seed_dir / "curve.csv", curve_columns(task.space))
        timing = CsvLog(seed_dir / "timing.csv", ["iteration", "seconds", "elapsed"], schema=TIMING_SCHEMA)
        try:
            result = runner(
                task.env_factory(), task.ctrl_factory(), task.space, algo,
                sink=curve, timing_sink=timing, eval_env_factory=task.eval_env_factory(),
            )
        except (IterationFailure, NonFiniteStateError, CriticDivergence) as exc:
            diag = getattr(exc, "diagnostics", {})
            diag = diag() if callable(diag) else diag
            write_summary(seed_dir / "summary.json", {"status": "failed", "error": str(exc), "diagnostics": diag})
            log.error("seed %d failed: %s", seed, exc)
            return EXIT_RUNTIME
        finally:
            curve.close()
            timing.close()
        summary = {"status": "ok", "task": cfg.task, "method": cfg.method, "seed": seed, **result.summary()}
        write_summary(seed_dir / "summary.json", summary)
        arrays = {
            "best_theta_m": result.best_theta_m,
            "final_theta_m": result.final_theta_m,
            "best_theta": result.best_theta,
        }
        if result.critic is not None:
            arrays["critic_w"] = result.critic.w
        save_checkpoint(seed_dir / "checkpoint.bin", _checkpoint_meta(cfg, seed, task.space, result), arrays)
        curves.append(read_curve(seed_dir / "curve.csv"))
        best = result.best_eval or {}
        print(f"seed {seed}: best eval cost {best.get('mean_cost', float('nan')):.6g} "
              f"({best.get('n_terminated', 0)} terminated), env steps {result.env_steps}")
    budgets, stats = compare({cfg.method: curves})
    _write_compare(run_dir / "aggregate.csv", budgets, stats)
    print(f"wrote {run_dir}")
    return EXIT_OK


def _write_compare(path: Path, budgets, stats: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    methods = list(stats)
    with open(path, "w", newline="") as fh:
        fh.write("# schema=ctrltune-compare/1 band=percentile-bootstrap-95-of-median\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env_steps"] + [f"{m}_{k}" for m in methods for k in ("median", "lo", "hi")])
        for i, b in enumerate(budgets):
            w.writerow([repr(float(b))] + [repr(float(stats[m][k][i])) for m in methods for k in ("median", "lo", "hi")])


def _trajectory_writer(path: Path):
    rows = []

    def cb(ep, t, obs, action, res, env):
        rows.append({"episode": ep, "t": t, **env.describe_step(action, res), "cost": res.cost})

    def flush():
        if not rows:
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})

    return cb, flush


def cmd_evaluate(args) -> int:
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    if args.nominal:
        if not args.task:
            raise ConfigError("--nominal needs --task")
        task = get_task(args.task)
        if task.nominal is None:
            raise ConfigError(f"task {args.task} has no nominal controller")
        raw = apply_overrides({}, args.set)
        task.scenario.update(raw.get("scenario", {}))
        task.controller.update(raw.get("controller", {}))
        theta, label = task.nominal, "nominal"
    else:
        if not args.checkpoint:
            raise ConfigError("give a checkpoint path or --nominal")
        meta, arrays = load_checkpoint(args.checkpoint)
        exp = meta["experiment"]
        exp = apply_overrides(exp, args.set)
        cfg = ExperimentConfig.from_dict(exp)
        task = cfg.build_task()
        theta = arrays["final_theta_m" if args.final else "best_theta_m"]
        theta, label = task.space.to_native(theta), "tuned"
    env = task.eval_env_factory()()
    ctrl = task.ctrl_factory()()
    cb = flush = None
    if args.dump:
        dump_cb, flush = _trajectory_writer(Path(args.dump))
        cb = lambda ep, t, obs, action, res: dump_cb(ep, t, obs, action, res, env)
    rep = evaluate(env, ctrl, theta, args.episodes, args.seed, callback=cb)
    if flush:
        flush()
    out = {"controller": label, "theta": task.space.native_dict(theta), **rep.as_dict()}
    if task.nominal is not None and label == "tuned":
        nom = evaluate(env, task.ctrl_factory()(), task.nominal, args.episodes, args.seed)
        out["nominal"] = nom.as_dict()
        out["ratio_to_nominal"] = rep.mean_cost / nom.mean_cost
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def _parse_assignments(items: List[str]) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"{item!r}: expected name=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"{k}: not a number: {v!r}") from None
    return out


def cmd_landscape(args) -> int:
    if args.grid < 1 or args.episodes < 1:
        raise ConfigError("--grid and --episodes must be >= 1")
    if args.checkpoint:
        meta, arrays = load_checkpoint(args.checkpoint)
        cfg = ExperimentConfig.from_dict(meta["experiment"])
        task = cfg.build_task()
        ref = task.space.to_native(arrays["best_theta_m"])
    else:
        if not args.task:
            raise ConfigError("give --task or --checkpoint")
        task = get_task(args.task)
        ref = task.nominal if task.nominal is not None else task.space.to_native(np.zeros(task.space.dim))
    ref = np.array(ref, dtype=float)
    for k, v in _parse_assignments(args.at).items():
        ref[task.space.index(k)] = v
    task.space.to_mapped(ref)  # bounds check
    task.space.index(args.param)
    rows = landscape(task, args.param, args.grid, args.episodes, ref, seed=args.seed)
    path = Path(args.out) if args.out else out_root() / f"landscape-{task.name}-{args.param}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.param, "mean_cost", "std_cost", "n_terminated"])
        for v, m, s, n in rows:
            w.writerow([repr(v), repr(m), repr(s), n])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    run_sets = {}
    for item in args.run:
        if "=" not in item:
            raise ConfigError(f"--run {item!r}: expected label=run_dir")
        label, d = item.split("=", 1)
        files = sorted(Path(d).glob("seed_*/curve.csv"))
        if not files:
            raise ConfigError(f"--run {label}: no seed_*/curve.csv under {d}")
        run_sets[label] = [read_curve(f) for f in files]
    if len(run_sets) < 2 and not args.allow_single:
        raise ConfigError("compare needs at least two run sets (--run label=dir, repeated)")
    budgets, stats = compare(run_sets, points=args.points, seed=args.seed)
    path = Path(args.out) if args.out else out_root() / "compare.csv"
    _write_compare(path, budgets, stats)
    finals = {m: float(s["median"][-1]) for m, s in stats.items()}
    print(json.dumps({"final_budget": float(budgets[-1]), "final_median": finals}, indent=2, sort_keys=True))
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctrltune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="run ZOAC or ES over the configured seeds")
    t.add_argument("config", nargs="?", help="YAML experiment config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    t.add_argument("--out", help="run directory (default: $%s/<name>)" % OUT_ENV)
    t.set_defaults(func=cmd_tune)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint or the nominal controller")
    e.add_argument("checkpoint", nargs="?")
    e.add_argument("--nominal", action="store_true", help="evaluate the task's nominal controller")
    e.add_argument("--task", help="task id (with --nominal)")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=10_000, help="evaluation seed set")
    e.add_argument("--final", action="store_true", help="use the final instead of the best parameters")
    e.add_argument("--dump", help="write per-step trajectories to this CSV")
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    e.set_defaults(func=cmd_evaluate)

    ls = sub.add_parser("landscape", help="1-D cost sweep over one parameter")
    ls.add_argument("--task")
    ls.add_argument("--checkpoint", help="take the reference point from a checkpoint")
    ls.add_argument("--param", required=True)
    ls.add_argument("--grid", type=int, default=21)
    ls.add_argument("--episodes", type=int, default=10)
    ls.add_argument("--seed", type=int, default=10_000)
    ls.add_argument("--at", action="append", default=[], metavar="NAME=VALUE", help="fix a reference value")
    ls.add_argument("--out")
    ls.set_defaults(func=cmd_landscape)

    c = sub.add_parser("compare", help="align run sets on env steps")
    c.add_argument("--run", action="append", default=[], required=True, metavar="LABEL=DIR")
    c.add_argument("--points", type=int, default=50)
    c.add_argument("--seed", type=int, default=0, help="bootstrap RNG seed")
    c.add_argument("--allow-single", action="store_true")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IterationFailure, NonFiniteStateError, CriticDivergence, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
