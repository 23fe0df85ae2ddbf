"""Landscape sweeps and cross-method comparison of learning curves."""
from __future__ import annotations

import logging
from typing import Dict, List, Sequence

import numpy as np

from .core import episode_seed, evaluate
from .envs.acc import AccEnv, evaluate_pid_batch
from .tasks import Task

__all__ = ["landscape", "eval_curve", "align_runs", "bootstrap_median_band", "compare"]

log = logging.getLogger(__name__)


def landscape(task: Task, name: str, grid_size: int, episodes: int, theta_ref, seed: int = 10000):
    """Cost along one native dimension with the others fixed at ``theta_ref``.

    Every grid point sees the same episode seeds. Returns rows of
    ``(value, mean_cost, std_cost, n_terminated)``.
    """
    if grid_size < 1 or episodes < 1:
        raise ValueError("grid_size and episodes must be >= 1")
    space = task.space
    j = space.index(name)
    theta_ref = np.asarray(theta_ref, dtype=float)
    spec = space.specs[j]
    if grid_size == 1:
        values = np.array([theta_ref[j]])
    elif spec.is_log:
        values = np.sign(spec.lower) * np.geomspace(abs(spec.lower), abs(spec.upper), grid_size)
    else:
        values = np.linspace(spec.lower, spec.upper, grid_size)
    thetas = np.tile(theta_ref, (len(values), 1))
    thetas[:, j] = values
    env = task.eval_env_factory()()
    rows = []
    if isinstance(env, AccEnv):
        seeds = [episode_seed(seed, k) for k in range(episodes)]
        costs, _, term = evaluate_pid_batch(thetas, env.p, seeds)
        for v, c, t in zip(values, costs, term):
            rows.append((float(v), float(c.mean()), float(c.std()), int(t.sum())))
        return rows
    ctrl = task.ctrl_factory()()
    for v, th in zip(values, thetas):
        rep = evaluate(env, ctrl, th, episodes, seed)
        rows.append((float(v), rep.mean_cost, rep.std_cost, rep.n_terminated))
    return rows


def eval_curve(curve: dict):
    """(env_steps, eval_cost_mean) at the rows that carry an evaluation."""
    steps = np.asarray(curve["env_steps"], dtype=float)
    cost = np.asarray(curve["eval_cost_mean"], dtype=float)
    keep = ~np.isnan(cost)
    return steps[keep], cost[keep]


def align_runs(curves: Sequence[dict], budgets) -> np.ndarray:
    """Latest evaluation at or before each budget, one row per run."""
    out = np.full((len(curves), len(budgets)), np.nan)
    for i, c in enumerate(curves):
        steps, cost = eval_curve(c)
        idx = np.searchsorted(steps, budgets, side="right") - 1
        ok = idx >= 0
        out[i, ok] = cost[idx[ok]]
    return out


def bootstrap_median_band(samples, n_boot: int = 2000, level: float = 0.95, seed: int = 0):
    """Median and percentile-bootstrap band over the first axis (seeds)."""
    x = np.asarray(samples, dtype=float)
    med = np.median(x, axis=0)
    if x.shape[0] < 2:
        return med, med.copy(), med.copy()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.shape[0], size=(n_boot, x.shape[0]))
    boots = np.median(x[idx], axis=1)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(boots, [a, 1.0 - a], axis=0)
    return med, lo, hi


def compare(run_sets: Dict[str, List[dict]], points: int = 50, n_boot: int = 2000, seed: int = 0):
    """Align several methods' curves on env steps.

    Returns ``(budgets, stats)`` where ``stats[method]`` holds median, lo, hi
    arrays. Budgets span the common prefix of all runs; a warning is logged
    when runs end at different step counts.
    """
    if len(run_sets) < 1 or any(len(v) == 0 for v in run_sets.values()):
        raise ValueError("every method needs at least one run")
    ends = [eval_curve(c)[0][-1] for runs in run_sets.values() for c in runs]
    starts = [eval_curve(c)[0][0] for runs in run_sets.values() for c in runs]
    end, start = min(ends), max(starts)
    if max(ends) != end:
        log.warning("runs end at different env-step counts (%d..%d); aligning on the common prefix up to %d",
                    min(ends), max(ends), end)
    budgets = np.unique(np.linspace(start, end, points).round()).astype(float)
    stats = {}
    for method, runs in run_sets.items():
        vals = align_runs(runs, budgets)
        med, lo, hi = bootstrap_median_band(vals, n_boot=n_boot, seed=seed)
        stats[method] = {"median": med, "lo": lo, "hi": hi, "n": len(runs)}
    return budgets, stats
