"""Experiment configuration: one YAML file with a section per module.

Every field has a default, so an empty file is a valid config. Unknown keys
and out-of-range values raise :class:`ConfigError` naming the field.
``dump_config`` writes the fully resolved config; loading that output gives
back an equal config.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .agent import AgentConfig
from .env import EnvConfig, NodeProfile, RewardWeights
from .errors import ConfigError, ProEdgeError
from .forecaster import ForecastConfig
from .workload import CongestionParams, MobilityParams, TraceParams

MODES = ("baseline", "hybrid")


@dataclass
class Seeds:
    workload: int = 1
    history: int = 1001
    env: int = 7
    agent: int = 11
    eval: tuple[int, ...] = (101, 102, 103, 104, 105)


@dataclass
class WorkloadConfig:
    horizon: int = 2000
    cpu: TraceParams = field(default_factory=TraceParams)
    congestion: CongestionParams = field(default_factory=CongestionParams)
    mobility: MobilityParams = field(default_factory=MobilityParams)


@dataclass
class TrainingConfig:
    episodes: int = 300
    mode: str = "hybrid"
    audit: bool = False


@dataclass
class ExperimentConfig:
    seeds: Seeds = field(default_factory=Seeds)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def validate(self):
        checks = [("workload.cpu", lambda: TraceParams(**{**_plain(self.workload.cpu),
                                                          "horizon": self.workload.horizon}).validate()),
                  ("workload.congestion", self.workload.congestion.validate),
                  ("workload.mobility", self.workload.mobility.validate),
                  ("env", self.env.validate),
                  ("forecast", self.forecast.validate),
                  ("agent", self.agent.validate)]
        for section, check in checks:
            try:
                check()
            except ProEdgeError as exc:
                raise ConfigError(f"{section}: {exc}") from exc
        if self.training.mode not in MODES:
            raise ConfigError(f"training.mode must be one of {MODES}, got {self.training.mode!r}")
        if self.training.episodes < 1:
            raise ConfigError("training.episodes must be >= 1")
        if self.forecast.input_channels != self.env.n_channels:
            raise ConfigError(f"forecast.input_channels must equal the number of nodes + 1 "
                              f"({self.env.n_channels}), got {self.forecast.input_channels}")
        if not self.seeds.eval:
            raise ConfigError("seeds.eval must list at least one seed")
        if self.workload.horizon < self.forecast.window + self.env.steps:
            raise ConfigError("workload.horizon must be >= forecast.window + env.steps")
        for node in self.env.nodes:
            if node.home_location >= self.workload.mobility.n_locations:
                raise ConfigError(f"env.nodes[{node.name}].home_location exceeds mobility.n_locations")
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with training seeds derived from ``seed``; evaluation seeds are kept."""
        s = dataclasses.replace(self.seeds, workload=seed, history=seed + 1000,
                                env=seed + 1, agent=seed + 2)
        return dataclasses.replace(self, seeds=s)

    def with_mode(self, mode: str) -> "ExperimentConfig":
        return dataclasses.replace(self, training=dataclasses.replace(self.training, mode=mode))


# generator seeds come from ``seeds``; they are not part of the file schema
_SKIP = {TraceParams: {"seed", "horizon"}, CongestionParams: {"seed"}, MobilityParams: {"seed"},
         ForecastConfig: {"seed"}, AgentConfig: {"seed"}}


def _plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        skip = _SKIP.get(type(obj), set())
        return {f.name: to_dict(getattr(obj, f.name))
                for f in dataclasses.fields(obj) if f.name not in skip}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data, path=""):
    """Build dataclass ``cls`` from a mapping, filling defaults for missing keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init} - _SKIP.get(cls, set())
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"YAML parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    return from_dict(ExperimentConfig, data).validate()


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


__all__ = ["ExperimentConfig", "Seeds", "WorkloadConfig", "TrainingConfig", "NodeProfile",
           "RewardWeights", "load_config", "parse_config", "dump_config", "from_dict", "to_dict"]
