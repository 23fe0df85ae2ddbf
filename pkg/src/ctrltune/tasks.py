"""Task registry: env/controller factories, parameter spaces and default budgets."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Dict, Optional

import numpy as np

from .core import Controller, Env
from .envs.acc import AccEnv, AccPlantParams, PidController, acc_space
from .envs.tracking import MpcController, TrackingEnv, TrackingScenario, nominal_theta, tracking_space
from .params import ConfigError, ParamSpace
from .toy import DirectController, QuadraticBandit, bandit_space
from .zoac import EsConfig, ZoacConfig

__all__ = ["Task", "TASKS", "get_task", "tracking_obs_scale"]


@dataclass
class Task:
    name: str
    space: ParamSpace
    env_builder: Callable[[dict], Env]
    ctrl_builder: Callable[[dict, dict], Controller]
    zoac: ZoacConfig
    es: EsConfig
    scenario: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    nominal: Optional[np.ndarray] = None
    # scenario keys replaced when evaluating (e.g. drop the training-only regularizer)
    eval_scenario: dict = field(default_factory=dict)

    def env_factory(self, scenario: Optional[dict] = None):
        sc = {**self.scenario, **(scenario or {})}
        return lambda: self.env_builder(sc)

    def eval_env_factory(self, scenario: Optional[dict] = None):
        return self.env_factory({**(scenario or {}), **self.eval_scenario})

    def ctrl_factory(self, scenario: Optional[dict] = None, controller: Optional[dict] = None):
        sc = {**self.scenario, **(scenario or {})}
        cc = {**self.controller, **(controller or {})}
        return lambda: self.ctrl_builder(sc, cc)


def _dataclass_kwargs(cls, values: dict, what: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys {sorted(unknown)}; valid: {sorted(names)}")
    return dict(values)


def _acc_env(sc: dict) -> Env:
    return AccEnv(AccPlantParams(**_dataclass_kwargs(AccPlantParams, sc, "scenario")))


def _acc_ctrl(sc: dict, cc: dict) -> Controller:
    p = AccPlantParams(**_dataclass_kwargs(AccPlantParams, sc, "scenario"))
    return PidController(p.u_min, p.u_max)


def _tracking_scenario(sc: dict) -> TrackingScenario:
    sc = dict(sc)
    for key in ("speed", "sine_amplitude", "sine_wavelength", "lane_shift"):
        if key in sc:
            sc[key] = tuple(sc[key])
    if "profiles" in sc:
        sc["profiles"] = tuple(sc["profiles"])
    return TrackingScenario(**_dataclass_kwargs(TrackingScenario, sc, "scenario"))


def _tracking_env(sc: dict) -> Env:
    return TrackingEnv(_tracking_scenario(sc))


def _tracking_ctrl(sc: dict, cc: dict) -> Controller:
    scen = _tracking_scenario(sc)
    cc = {k: v for k, v in cc.items() if k in ("gamma", "max_iter", "tol")}
    return MpcController(horizon=scen.horizon, Ts=scen.Ts, **cc)


def tracking_obs_scale(horizon: int) -> list:
    """Per-dimension critic input scale: positions in hectometres, the rest raw."""
    per_state = [0.01, 0.01, 1.0, 0.1, 1.0, 1.0]
    return per_state * (horizon + 1)


def _acc_task() -> Task:
    return Task(
        name="acc-pid",
        space=acc_space(),
        env_builder=_acc_env,
        ctrl_builder=_acc_ctrl,
        zoac=ZoacConfig(segments=4, segment_length=10, sigma=0.08, actor_lr_start=3e-2, actor_lr_end=1e-2,
                        iterations=300, eval_every=5, init="random"),
        es=EsConfig(population=10, sigma=0.08, lr_start=3e-2, lr_end=1e-2, iterations=100, init="random"),
    )


def _tracking_task(name: str, reg_coef: float) -> Task:
    return Task(
        name=name,
        space=tracking_space(),
        env_builder=_tracking_env,
        ctrl_builder=_tracking_ctrl,
        zoac=ZoacConfig(segments=5, segment_length=20, sigma=0.1, actor_lr_start=5e-2, actor_lr_end=1e-2,
                        iterations=500, eval_every=10, init="random"),
        es=EsConfig(population=10, sigma=0.1, lr_start=5e-2, lr_end=1e-2, iterations=100, eval_every=5, init="random"),
        scenario={"reg_coef": reg_coef},
        eval_scenario={"reg_coef": 0.0},
        controller={"gamma": 0.99},
        nominal=nominal_theta(),
    )


def _toy_task() -> Task:
    return Task(
        name="toy-quadratic",
        space=bandit_space(),
        env_builder=lambda sc: QuadraticBandit(**sc),
        ctrl_builder=lambda sc, cc: DirectController(),
        zoac=ZoacConfig(segments=4, segment_length=10, sigma=0.08, iterations=300, eval_every=10,
                        eval_episodes=1, init="random"),
        es=EsConfig(population=10, sigma=0.08, iterations=300, eval_every=10, eval_episodes=1, init="random"),
        scenario={"target": 0.3},
    )


TASKS: Dict[str, Callable[[], Task]] = {
    "acc-pid": _acc_task,
    "tracking-mpc": lambda: _tracking_task("tracking-mpc", 0.0),
    "tracking-mpc-reg": lambda: _tracking_task("tracking-mpc-reg", 50.0),
    "toy-quadratic": _toy_task,
}


def get_task(name: str) -> Task:
    try:
        return TASKS[name]()
    except KeyError:
        raise ConfigError(f"unknown task {name!r}; valid tasks: {', '.join(TASKS)}") from None
