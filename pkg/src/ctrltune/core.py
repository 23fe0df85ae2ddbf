"""Controller/environment contracts, segment rollouts and deterministic evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

__all__ = [
    "StepResult",
    "Controller",
    "Env",
    "SegmentRecord",
    "EvaluationReport",
    "NonFiniteStateError",
    "EpisodeStream",
    "rollout_segment",
    "evaluate",
    "episode_seed",
]


class NonFiniteStateError(RuntimeError):
    def __init__(self, message, *, episode=None, step=None, obs=None):
        super().__init__(message)
        self.episode = episode
        self.step = step
        self.obs = obs

    def diagnostics(self) -> dict:
        return {"episode": self.episode, "step": self.step, "obs": None if self.obs is None else list(self.obs)}


@dataclass
class StepResult:
    next_obs: np.ndarray
    cost: float
    terminated: bool = False
    truncated: bool = False
    info: dict = field(default_factory=dict)


class Controller:
    """Deterministic parameterized policy ``a = pi_theta(s)``."""

    def set_params(self, theta) -> None:
        raise NotImplementedError

    def reset(self) -> None:
        pass

    def act(self, obs):
        raise NotImplementedError


class Env:
    """Episodic plant returning costs.

    Subclasses implement ``_reset(rng) -> obs`` and
    ``_step(action) -> (obs, cost, terminated, info)``; this base class counts
    steps and raises the truncation flag at ``max_episode_length``.
    """

    obs_dim: int = 0
    max_episode_length: int = 1

    def __init__(self):
        self.t = 0

    def reset(self, seed=None) -> np.ndarray:
        self.t = 0
        return self._reset(np.random.default_rng(seed))

    def step(self, action) -> StepResult:
        obs, cost, terminated, info = self._step(action)
        self.t += 1
        truncated = (not terminated) and self.t >= self.max_episode_length
        return StepResult(obs, float(cost), bool(terminated), truncated, info)

    def bind_params(self, theta) -> None:
        """Told the controller's current native parameters; no-op by default."""

    def describe_step(self, action, result: StepResult) -> dict:
        return {}

    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


@dataclass
class SegmentRecord:
    """Consecutive transitions collected under one parameter perturbation.

    ``terminated[k]`` marks a failure ending (next state has value 0),
    ``truncated[k]`` a time-limit ending (bootstrap from ``next_obs[k]``).
    When the stream auto-resets, transitions after a boundary belong to a
    fresh episode.
    """

    noise: np.ndarray
    obs: np.ndarray
    actions: list
    costs: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    worker: int = 0
    slot: int = 0
    advantage: float = float("nan")
    end_obs: Optional[np.ndarray] = None
    infos: list = field(default_factory=list)

    def __len__(self):
        return len(self.costs)

    @property
    def done(self) -> np.ndarray:
        return self.terminated | self.truncated


def episode_seed(seed: int, k: int) -> int:
    """Seed of episode ``k`` in the evaluation set identified by ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def rollout_segment(
    env: Env,
    ctrl: Controller,
    start_obs,
    n_steps: int,
    *,
    rng: Optional[np.random.Generator] = None,
    auto_reset: bool = False,
    noise=None,
) -> SegmentRecord:
    """Run ``ctrl`` (parameters already set) for up to ``n_steps`` env steps.

    Without ``auto_reset`` the segment stops at the first episode boundary.
    With it, the env is reset using seeds drawn from ``rng`` and the segment
    keeps going until exactly ``n_steps`` transitions are recorded.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if auto_reset and rng is None:
        raise ValueError("auto_reset needs an rng for reset seeds")
    obs_l, act_l, cost_l, next_l, term_l, trunc_l, infos = [], [], [], [], [], [], []
    obs = np.asarray(start_obs, dtype=float)
    for _ in range(n_steps):
        action = ctrl.act(obs)
        res = env.step(action)
        obs_l.append(obs)
        act_l.append(action)
        cost_l.append(res.cost)
        next_l.append(res.next_obs)
        term_l.append(res.terminated)
        trunc_l.append(res.truncated)
        infos.append(res.info)
        obs = np.asarray(res.next_obs, dtype=float)
        if res.terminated or res.truncated:
            if not auto_reset:
                break
            obs = env.reset(seed=int(rng.integers(2**63 - 1)))
            ctrl.reset()
    return SegmentRecord(
        noise=np.zeros(0) if noise is None else np.asarray(noise, dtype=float),
        obs=np.array(obs_l),
        actions=act_l,
        costs=np.array(cost_l, dtype=float),
        next_obs=np.array(next_l),
        terminated=np.array(term_l, dtype=bool),
        truncated=np.array(trunc_l, dtype=bool),
        end_obs=obs,
        infos=infos,
    )


class EpisodeStream:
    """One worker's continuing episode stream: env + controller + private RNG."""

    def __init__(self, env: Env, ctrl: Controller, rng: np.random.Generator, worker: int = 0):
        self.env = env
        self.ctrl = ctrl
        self.rng = rng
        self.worker = worker
        self.obs = None
        self.steps = 0
        self._episode_cost = 0.0
        self.finished_costs: List[float] = []

    def run(self, theta_native, n_steps: int, noise=None, slot: int = 0) -> SegmentRecord:
        if self.obs is None:
            self.obs = self.env.reset(seed=int(self.rng.integers(2**63 - 1)))
            self.ctrl.reset()
        self.ctrl.set_params(theta_native)
        self.env.bind_params(theta_native)
        rec = rollout_segment(
            self.env, self.ctrl, self.obs, n_steps, rng=self.rng, auto_reset=True, noise=noise
        )
        rec.worker, rec.slot = self.worker, slot
        self.obs = rec.end_obs
        self.steps += len(rec)
        for c, d in zip(rec.costs, rec.done):
            self._episode_cost += c
            if d:
                self.finished_costs.append(self._episode_cost)
                self._episode_cost = 0.0
        return rec

    def pop_finished(self) -> List[float]:
        out, self.finished_costs = self.finished_costs, []
        return out


@dataclass
class EvaluationReport:
    episode_costs: np.ndarray
    episode_lengths: np.ndarray
    terminated: np.ndarray
    prediction_errors: Optional[np.ndarray] = None

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.episode_costs))

    @property
    def std_cost(self) -> float:
        return float(np.std(self.episode_costs))

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.episode_lengths))

    @property
    def n_terminated(self) -> int:
        return int(np.sum(self.terminated))

    @property
    def mean_prediction_error(self) -> Optional[float]:
        if self.prediction_errors is None:
            return None
        return float(np.mean(self.prediction_errors))

    def as_dict(self) -> dict:
        out = {
            "mean_cost": self.mean_cost,
            "std_cost": self.std_cost,
            "mean_length": self.mean_length,
            "n_terminated": self.n_terminated,
            "episodes": len(self.episode_costs),
        }
        if self.prediction_errors is not None:
            out["mean_prediction_error"] = self.mean_prediction_error
        return out


def evaluate(
    env: Env,
    ctrl: Controller,
    theta_native,
    episodes: int,
    seed: int,
    callback: Optional[Callable] = None,
) -> EvaluationReport:
    """Undiscounted cumulative cost of the unperturbed controller.

    ``callback(episode, t, obs, action, result)`` is invoked after every step
    (used for trajectory dumps).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    ctrl.set_params(theta_native)
    env.bind_params(theta_native)
    costs, lengths, terms, pred = [], [], [], []
    for ep in range(episodes):
        obs = env.reset(seed=episode_seed(seed, ep))
        ctrl.reset()
        total, t, perr = 0.0, 0, []
        while True:
            action = ctrl.act(obs)
            res = env.step(action)
            if not (math.isfinite(res.cost) and np.all(np.isfinite(res.next_obs))):
                raise NonFiniteStateError(
                    f"non-finite state in evaluation episode {ep} at step {t}",
                    episode=ep, step=t, obs=np.asarray(res.next_obs),
                )
            if callback is not None:
                callback(ep, t, obs, action, res)
            total += res.cost
            t += 1
            if "prediction_error" in res.info:
                perr.append(res.info["prediction_error"])
            obs = res.next_obs
            if res.terminated or res.truncated:
                break
        costs.append(total)
        lengths.append(t)
        terms.append(res.terminated)
        if perr:
            pred.append(float(np.mean(perr)))
    return EvaluationReport(
        np.array(costs),
        np.array(lengths),
        np.array(terms, dtype=bool),
        np.array(pred) if len(pred) == episodes else None,
    )
