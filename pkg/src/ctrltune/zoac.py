"""Zeroth-order actor-critic tuner and the episodic ES baseline.

One ZOAC iteration:

1. every worker runs ``H`` segments of ``N`` steps, each under its own
   parameter perturbation ``clamp(theta_m + sigma * eps)``;
2. the critic scores the collected states, giving value targets for every
   state and one GAE advantage per segment;
3. the critic is fitted to the targets (``M`` epochs, minibatch ``L``);
4. ``theta_m`` takes an Adam ascent step along ``sum(A * eps) / (n H sigma)``.

Costs are negated into rewards internally; everything logged is cost.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .core import Controller, Env, EpisodeStream, EvaluationReport, SegmentRecord, evaluate
from .critic import Adam, ValueNet, compute_advantage, compute_value_targets, train_critic
from .params import ConfigError, ParamSpace, clamp

__all__ = [
    "ZoacConfig",
    "EsConfig",
    "ActorState",
    "TuneResult",
    "IterationFailure",
    "worker_rngs",
    "init_theta_m",
    "collect_iteration",
    "score_segments",
    "actor_gradient",
    "es_gradient",
    "annealed_lr",
    "update_actor",
    "tune",
    "es_baseline",
]

log = logging.getLogger(__name__)

EnvFactory = Callable[[], Env]
CtrlFactory = Callable[[], Controller]


class IterationFailure(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class ZoacConfig:
    n_workers: int = 10
    segments: int = 4  # H, segments per worker per iteration
    segment_length: int = 10  # N
    sigma: float = 0.08
    gamma: float = 0.99
    lam: float = 0.95
    critic_epochs: int = 10
    minibatch: int = 128
    critic_lr: float = 5e-4
    critic_hidden: tuple = (256, 256)
    actor_lr_start: float = 3e-2
    actor_lr_end: float = 1e-2
    iterations: int = 300
    seed: int = 0
    standardize_advantages: bool = False
    eval_every: int = 5
    eval_episodes: int = 5
    eval_seed: int = 10_000
    init: Union[str, list] = "random"
    obs_scale: Optional[list] = None
    threads: int = 1

    def validate(self) -> "ZoacConfig":
        for name in ("n_workers", "segments", "segment_length", "critic_epochs", "minibatch", "eval_every", "eval_episodes", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0 (the gradient estimator divides by it)")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0 < self.lam < 1:
            raise ConfigError("lam must lie in (0, 1)")
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        return self

    @property
    def steps_per_iteration(self) -> int:
        return self.n_workers * self.segments * self.segment_length


@dataclass
class EsConfig:
    population: int = 10
    sigma: float = 0.08
    lr_start: float = 3e-2
    lr_end: float = 1e-2
    iterations: int = 100
    env_step_budget: Optional[int] = None
    baseline: bool = True
    antithetic: bool = False
    seed: int = 0
    eval_every: int = 1
    eval_episodes: int = 5
    eval_seed: int = 10_000
    init: Union[str, list] = "random"

    def validate(self) -> "EsConfig":
        if self.population < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("population, eval_every and eval_episodes must be >= 1")
        if self.antithetic and self.population % 2:
            raise ConfigError("antithetic sampling needs an even population")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        return self


@dataclass
class ActorState:
    theta_m: np.ndarray
    adam: Adam
    iteration: int = 0


@dataclass
class TuneResult:
    space: ParamSpace
    best_theta_m: np.ndarray
    best_eval: Optional[dict]
    final_theta_m: np.ndarray
    rows: List[dict] = field(default_factory=list)
    env_steps: int = 0
    wall_clock: float = 0.0
    critic: Optional[ValueNet] = None

    @property
    def best_theta(self) -> np.ndarray:
        return self.space.to_native(self.best_theta_m)

    @property
    def final_theta(self) -> np.ndarray:
        return self.space.to_native(self.final_theta_m)

    def summary(self) -> dict:
        return {
            "best_theta": self.space.native_dict(self.best_theta),
            "best_theta_m": [float(x) for x in self.best_theta_m],
            "best_eval": self.best_eval,
            "final_theta": self.space.native_dict(self.final_theta),
            "final_theta_m": [float(x) for x in self.final_theta_m],
            "env_steps": self.env_steps,
            "wall_clock_s": self.wall_clock,
        }


def worker_rngs(seed: int, n: int) -> List[np.random.Generator]:
    """Private streams for ``n`` workers: fixed jumps of the master PCG64."""
    base = np.random.PCG64(int(seed))
    return [np.random.Generator(base.jumped(i + 1)) for i in range(n)]


def init_theta_m(init, dim: int, rng: np.random.Generator, space: Optional[ParamSpace] = None) -> np.ndarray:
    """``"random"`` (uniform in the cube), ``"center"``, a mapped vector, or
    ``{"native": {...}}`` with native values."""
    if isinstance(init, str):
        if init == "random":
            return rng.uniform(-1.0, 1.0, dim)
        if init == "center":
            return np.zeros(dim)
        raise ConfigError(f"unknown init {init!r}; use 'random', 'center' or a vector")
    if isinstance(init, dict):
        if space is None or "native" not in init:
            raise ConfigError("dict init needs a 'native' mapping and a parameter space")
        return clamp(space.to_mapped(space.from_dict(init["native"])))
    m = np.asarray(init, dtype=float)
    if m.shape != (dim,):
        raise ConfigError(f"init vector must have length {dim}")
    return clamp(m)


def annealed_lr(start: float, end: float, progress: float) -> float:
    """Linear schedule; ``progress`` in [0, 1]."""
    return start + (end - start) * min(max(progress, 0.0), 1.0)


def collect_iteration(
    theta_m: np.ndarray,
    cfg: ZoacConfig,
    streams: Sequence[EpisodeStream],
    space: ParamSpace,
    executor: Optional[ThreadPoolExecutor] = None,
) -> List[List[SegmentRecord]]:
    """Run ``H`` perturbed segments on every worker stream."""

    def work(stream: EpisodeStream) -> List[SegmentRecord]:
        out = []
        for j in range(cfg.segments):
            eps = stream.rng.standard_normal(space.dim)
            theta = space.to_native(clamp(theta_m + cfg.sigma * eps))
            out.append(stream.run(theta, cfg.segment_length, noise=eps, slot=j))
        return out

    try:
        if executor is None:
            return [work(s) for s in streams]
        return list(executor.map(work, streams))
    except Exception as exc:
        steps = [s.steps for s in streams]
        raise IterationFailure(f"collection failed: {exc!r}", {"worker_steps": steps}) from exc


def score_segments(net: ValueNet, worker_records: List[SegmentRecord], gamma: float, lam: float):
    """Fill segment advantages; return (states, value targets) for one worker.

    The worker's segments are contiguous in its episode stream, so targets
    are computed over their concatenation.
    """
    obs = np.concatenate([r.obs for r in worker_records])
    nxt = np.concatenate([r.next_obs for r in worker_records])
    rew = -np.concatenate([r.costs for r in worker_records])
    term = np.concatenate([r.terminated for r in worker_records])
    done = np.concatenate([r.done for r in worker_records])
    v = net(obs)
    nv = net(nxt)
    targets = compute_value_targets(rew, v, nv, term, done, gamma, lam)
    off = 0
    for r in worker_records:
        sl = slice(off, off + len(r))
        r.advantage = compute_advantage(rew[sl], v[sl], nv[sl], term[sl], done[sl], gamma, lam)
        off += len(r)
    return obs, targets


def actor_gradient(noises, advantages, sigma: float, standardize: bool = False) -> np.ndarray:
    """``sum_k A_k eps_k / (K sigma)`` over the ``K`` segments of an iteration."""
    eps = np.atleast_2d(np.asarray(noises, dtype=float))
    adv = np.asarray(advantages, dtype=float).reshape(-1)
    if len(adv) != len(eps):
        raise ValueError("one advantage per noise vector")
    if standardize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv @ eps / (len(adv) * sigma)


def es_gradient(returns, noises, sigma: float, baseline: bool = True) -> np.ndarray:
    """Monte-Carlo gradient of the Gaussian-smoothed objective from episodic returns."""
    f = np.asarray(returns, dtype=float).reshape(-1)
    eps = np.atleast_2d(np.asarray(noises, dtype=float))
    if baseline:
        f = f - f.mean()
    return f @ eps / (len(f) * sigma)


def update_actor(actor: ActorState, g, lr: float) -> ActorState:
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise IterationFailure("non-finite actor gradient", {"gradient": g.tolist(), "iteration": actor.iteration})
    # ascent: descend on -g
    actor.theta_m = clamp(actor.adam.step(actor.theta_m, -g, lr))
    actor.iteration += 1
    return actor


def _theta_columns(space: ParamSpace, theta_m) -> dict:
    native = space.to_native(theta_m)
    return {f"theta_{n}": float(v) for n, v in zip(space.names, native)}


def _eval_columns(rep: Optional[EvaluationReport]) -> dict:
    if rep is None:
        return {"eval_cost_mean": None, "eval_cost_std": None, "eval_terminated": None, "eval_pred_error": None}
    return {
        "eval_cost_mean": rep.mean_cost,
        "eval_cost_std": rep.std_cost,
        "eval_terminated": rep.n_terminated,
        "eval_pred_error": rep.mean_prediction_error,
    }


class _Best:
    def __init__(self):
        self.cost = math.inf
        self.theta_m = None
        self.report = None

    def offer(self, theta_m, rep: EvaluationReport):
        if rep.mean_cost < self.cost:
            self.cost = rep.mean_cost
            self.theta_m = theta_m.copy()
            self.report = rep.as_dict()


def tune(
    env_factory: EnvFactory,
    ctrl_factory: CtrlFactory,
    space: ParamSpace,
    cfg: ZoacConfig,
    sink: Optional[Callable[[dict], None]] = None,
    timing_sink: Optional[Callable[[dict], None]] = None,
    eval_env_factory: Optional[EnvFactory] = None,
) -> TuneResult:
    """Tune controller parameters with ZOAC.

    ``sink`` receives one row per iteration (plus an initial row at zero env
    steps) as soon as it is complete. ``eval_env_factory`` builds the env used
    for evaluation when it differs from the training env.
    """
    cfg.validate()
    t0 = time.perf_counter()
    master = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    theta_m = init_theta_m(cfg.init, space.dim, master, space)
    actor = ActorState(theta_m, Adam(space.dim))
    probe = env_factory()
    net = ValueNet(probe.obs_dim, cfg.critic_hidden, rng=master, input_scale=cfg.obs_scale)
    critic_opt = Adam(net.n_params, lr=cfg.critic_lr)
    streams = [
        EpisodeStream(env_factory(), ctrl_factory(), rng, worker=i)
        for i, rng in enumerate(worker_rngs(cfg.seed, cfg.n_workers))
    ]
    eval_env = probe if eval_env_factory is None else eval_env_factory()
    eval_ctrl = ctrl_factory()
    best = _Best()
    rows: List[dict] = []
    env_steps = 0

    def run_eval(theta_m):
        rep = evaluate(eval_env, eval_ctrl, space.to_native(theta_m), cfg.eval_episodes, cfg.eval_seed)
        best.offer(theta_m, rep)
        return rep

    def emit(row, t_iter):
        rows.append(row)
        if sink is not None:
            sink(row)
        if timing_sink is not None:
            timing_sink({"iteration": row["iteration"], "seconds": t_iter, "elapsed": time.perf_counter() - t0})

    rep = run_eval(actor.theta_m)
    emit(
        {"iteration": 0, "env_steps": 0, "train_cost": None, "behavior_cost": None,
         **_eval_columns(rep), "actor_lr": None, "grad_norm": None, "critic_loss": None,
         **_theta_columns(space, actor.theta_m)},
        0.0,
    )

    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for it in range(cfg.iterations):
            t_it = time.perf_counter()
            lr = annealed_lr(cfg.actor_lr_start, cfg.actor_lr_end, it / max(cfg.iterations, 1))
            per_worker = collect_iteration(actor.theta_m, cfg, streams, space, executor)
            n_steps = sum(len(r) for recs in per_worker for r in recs)
            env_steps += n_steps

            states, targets = [], []
            for recs in per_worker:
                s, g_hat = score_segments(net, recs, cfg.gamma, cfg.lam)
                states.append(s)
                targets.append(g_hat)
            try:
                trace = train_critic(
                    net, critic_opt, np.concatenate(states), np.concatenate(targets),
                    cfg.critic_epochs, cfg.minibatch, rng=master,
                )
            except Exception as exc:
                raise IterationFailure(f"critic update failed at iteration {it + 1}: {exc}", {"iteration": it + 1}) from exc

            records = [r for recs in per_worker for r in recs]
            g = actor_gradient([r.noise for r in records], [r.advantage for r in records], cfg.sigma, cfg.standardize_advantages)
            update_actor(actor, g, lr)

            rep = None
            if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
                rep = run_eval(actor.theta_m)
            finished = [c for s in streams for c in s.pop_finished()]
            train_cost = float(np.mean(np.concatenate([r.costs for r in records])))
            emit(
                {
                    "iteration": it + 1,
                    "env_steps": env_steps,
                    "train_cost": train_cost,
                    "behavior_cost": float(np.mean(finished)) if finished else None,
                    **_eval_columns(rep),
                    "actor_lr": lr,
                    "grad_norm": float(np.linalg.norm(g)),
                    "critic_loss": trace[-1],
                    **_theta_columns(space, actor.theta_m),
                },
                time.perf_counter() - t_it,
            )
            if rep is not None:
                log.info("iter %d steps %d eval cost %.4g", it + 1, env_steps, rep.mean_cost)
    finally:
        if executor is not None:
            executor.shutdown()

    return TuneResult(
        space=space,
        best_theta_m=best.theta_m,
        best_eval=best.report,
        final_theta_m=actor.theta_m.copy(),
        rows=rows,
        env_steps=env_steps,
        wall_clock=time.perf_counter() - t0,
        critic=net,
    )


def _run_episode(env: Env, ctrl: Controller, theta, seed: int):
    ctrl.set_params(theta)
    env.bind_params(theta)
    obs = env.reset(seed=seed)
    ctrl.reset()
    total, steps = 0.0, 0
    while True:
        res = env.step(ctrl.act(obs))
        total += res.cost
        steps += 1
        obs = res.next_obs
        if res.terminated or res.truncated:
            return total, steps


def es_baseline(
    env_factory: EnvFactory,
    ctrl_factory: CtrlFactory,
    space: ParamSpace,
    cfg: EsConfig,
    sink: Optional[Callable[[dict], None]] = None,
    timing_sink: Optional[Callable[[dict], None]] = None,
    eval_env_factory: Optional[EnvFactory] = None,
) -> TuneResult:
    """Episodic ES: one fixed perturbation per full episode.

    Stops after ``cfg.iterations`` or once ``cfg.env_step_budget`` env steps
    have been consumed, whichever comes first; with a budget the learning
    rate anneals over the budget instead of the iteration count.
    """
    cfg.validate()
    t0 = time.perf_counter()
    master = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    theta_m = init_theta_m(cfg.init, space.dim, master, space)
    actor = ActorState(theta_m, Adam(space.dim))
    rng = worker_rngs(cfg.seed, 1)[0]
    env, ctrl = env_factory(), ctrl_factory()
    eval_env, eval_ctrl = (eval_env_factory or env_factory)(), ctrl_factory()
    best = _Best()
    rows: List[dict] = []
    env_steps = 0

    def emit(row, t_iter):
        rows.append(row)
        if sink is not None:
            sink(row)
        if timing_sink is not None:
            timing_sink({"iteration": row["iteration"], "seconds": t_iter, "elapsed": time.perf_counter() - t0})

    def run_eval(theta_m):
        rep = evaluate(eval_env, eval_ctrl, space.to_native(theta_m), cfg.eval_episodes, cfg.eval_seed)
        best.offer(theta_m, rep)
        return rep

    rep = run_eval(actor.theta_m)
    emit(
        {"iteration": 0, "env_steps": 0, "train_cost": None, "behavior_cost": None,
         **_eval_columns(rep), "actor_lr": None, "grad_norm": None, "critic_loss": None,
         **_theta_columns(space, actor.theta_m)},
        0.0,
    )
    it = 0
    while it < cfg.iterations and (cfg.env_step_budget is None or env_steps < cfg.env_step_budget):
        t_it = time.perf_counter()
        if cfg.env_step_budget is not None:
            progress = env_steps / cfg.env_step_budget
        else:
            progress = it / max(cfg.iterations, 1)
        lr = annealed_lr(cfg.lr_start, cfg.lr_end, progress)
        if cfg.antithetic:
            half = rng.standard_normal((cfg.population // 2, space.dim))
            eps = np.concatenate([half, -half])
        else:
            eps = rng.standard_normal((cfg.population, space.dim))
        returns, costs = [], []
        for e in eps:
            theta = space.to_native(clamp(actor.theta_m + cfg.sigma * e))
            cost, steps = _run_episode(env, ctrl, theta, int(rng.integers(2**63 - 1)))
            env_steps += steps
            costs.append(cost)
            returns.append(-cost)
        g = es_gradient(returns, eps, cfg.sigma, cfg.baseline)
        update_actor(actor, g, lr)
        it += 1
        last = it >= cfg.iterations or (cfg.env_step_budget is not None and env_steps >= cfg.env_step_budget)
        rep = None
        if it % cfg.eval_every == 0 or last:
            rep = run_eval(actor.theta_m)
        emit(
            {
                "iteration": it,
                "env_steps": env_steps,
                "train_cost": None,
                "behavior_cost": float(np.mean(costs)),
                **_eval_columns(rep),
                "actor_lr": lr,
                "grad_norm": float(np.linalg.norm(g)),
                "critic_loss": None,
                **_theta_columns(space, actor.theta_m),
            },
            time.perf_counter() - t_it,
        )
    return TuneResult(
        space=space,
        best_theta_m=best.theta_m,
        best_eval=best.report,
        final_theta_m=actor.theta_m.copy(),
        rows=rows,
        env_steps=env_steps,
        wall_clock=time.perf_counter() - t0,
    )
