"""Zeroth-order actor-critic tuning of parameterized controllers."""
from .core import Controller, Env, EvaluationReport, NonFiniteStateError, StepResult, evaluate, rollout_segment
from .critic import Adam, ValueNet, compute_advantage, compute_value_targets, gae, train_critic
from .params import ConfigError, ParamSpace, ParamSpec, clamp
from .zoac import EsConfig, TuneResult, ZoacConfig, es_baseline, tune

__version__ = "0.1.0"

__all__ = [
    "Controller", "Env", "EvaluationReport", "NonFiniteStateError", "StepResult", "evaluate", "rollout_segment",
    "Adam", "ValueNet", "compute_advantage", "compute_value_targets", "gae", "train_critic",
    "ConfigError", "ParamSpace", "ParamSpec", "clamp",
    "EsConfig", "TuneResult", "ZoacConfig", "es_baseline", "tune",
]
