"""Experiment configuration: YAML file plus ``key=value`` overrides."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, List, Optional, Union

import yaml

from .params import ConfigError, ParamSpace
from .tasks import TASKS, Task, get_task
from .zoac import EsConfig, ZoacConfig

__all__ = ["ExperimentConfig", "load_config", "apply_overrides", "METHODS"]

METHODS = ("zoac", "es")
_TOP_KEYS = {"task", "method", "seeds", "out_dir", "zoac", "es", "params", "scenario", "controller", "name"}


@dataclass
class ExperimentConfig:
    task: str
    method: str = "zoac"
    seeds: List[int] = field(default_factory=lambda: [0])
    out_dir: Optional[str] = None
    name: Optional[str] = None
    zoac: dict = field(default_factory=dict)
    es: dict = field(default_factory=dict)
    params: Optional[list] = None
    scenario: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping at the top level")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown key; valid keys: {sorted(_TOP_KEYS)}")
        if "task" not in raw:
            raise ConfigError("task: required")
        cfg = cls(**copy.deepcopy(raw))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task: unknown task {self.task!r}; valid tasks: {', '.join(TASKS)}")
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if isinstance(self.seeds, int):
            self.seeds = [self.seeds]
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds: must be a non-empty list of integers")
        for i, s in enumerate(self.seeds):
            if isinstance(s, bool) or not isinstance(s, int):
                raise ConfigError(f"seeds[{i}]: expected an integer, got {s!r}")
        for key in ("zoac", "es", "scenario", "controller"):
            if not isinstance(getattr(self, key), dict):
                raise ConfigError(f"{key}: must be a mapping")
        # resolve once so that bad keys and values surface before any run starts
        task = self.build_task()
        for s in self.seeds:
            self.algorithm_config(task, s)
        task.env_factory()()
        task.ctrl_factory()()
        return self

    def build_task(self) -> Task:
        task = get_task(self.task)
        if self.params is not None:
            try:
                space = ParamSpace.from_config(self.params)
            except ConfigError as exc:
                raise ConfigError(f"params: {exc}") from None
            if space.dim != task.space.dim:
                raise ConfigError(f"params: task {self.task} needs {task.space.dim} parameters, got {space.dim}")
            task.space = space
        task.scenario = {**task.scenario, **self.scenario}
        task.controller = {**task.controller, **self.controller}
        try:
            task.env_factory()
        except ConfigError as exc:
            raise ConfigError(f"scenario: {exc}") from None
        return task

    def algorithm_config(self, task: Task, seed: int) -> Union[ZoacConfig, EsConfig]:
        key = self.method
        base = task.zoac if key == "zoac" else task.es
        overrides = getattr(self, key)
        names = {f.name for f in fields(base)}
        for k in overrides:
            if k not in names:
                raise ConfigError(f"{key}.{k}: unknown field; valid: {sorted(names)}")
        try:
            cfg = replace(base, **{**overrides, "seed": int(seed)})
            if isinstance(cfg, ZoacConfig) and isinstance(cfg.critic_hidden, list):
                cfg.critic_hidden = tuple(cfg.critic_hidden)
            return cfg.validate()
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{key}: {exc}") from None


def _parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_overrides(raw: dict, overrides: List[str]) -> dict:
    """Apply ``a.b.c=value`` overrides (values parsed as YAML scalars/lists)."""
    raw = copy.deepcopy(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node = raw
        for depth, k in enumerate(keys[:-1]):
            nxt = node.get(k)
            if nxt is None:
                nxt = node[k] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"{'.'.join(keys[:depth + 1])}: not a mapping, cannot set {path}")
            node = nxt
        node[keys[-1]] = _parse_value(value)
    return raw


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[List[str]] = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return ExperimentConfig.from_dict(apply_overrides(raw, overrides or []))
