"""YAML experiment configuration with environment-variable overrides.

A config file has two sections, ``env`` and ``train``, plus an optional
top-level ``seeds`` list.  Any key can be overridden from the environment
with ``EVSAFE_<SECTION>__<KEY>=<yaml value>``, e.g.
``EVSAFE_TRAIN__EPISODES=5``.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .agents import TrainConfig
from .env import EnvConfig, StationConfig
from .network import BUNDLED_33BUS, RadialNetwork, load_network
from .scenario import BUNDLED_SCENARIOS, load_scenarios

ENV_PREFIX = "EVSAFE_"

DEFAULTS = {
    "env": {
        "network": "bundled:ieee33",
        "scenarios": "bundled",
        "stations": [{"bus": b, "chargers": 5, "pv_kwp": 13.0} for b in (8, 12, 22, 30)],
        "train_fraction": 0.8,
    },
    "train": {"algorithm": "sacl"},
    "seeds": [0, 1, 2],
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_env_overrides(cfg: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    cfg = copy.deepcopy(cfg)
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        node = cfg
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {part!r} is not a section")
        node[path[-1]] = yaml.safe_load(environ[key])
    return cfg


def load_config(path=None, environ=None) -> dict:
    raw = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_dir = path.parent
    cfg = apply_env_overrides(_merge(DEFAULTS, raw), environ)
    cfg["_base_dir"] = str(base_dir)
    cfg["_source"] = str(path) if path is not None else "<defaults>"
    return cfg


def _resolve(cfg: dict, value: str, bundled: dict) -> Path:
    if value in bundled:
        return bundled[value]
    p = Path(value)
    return p if p.is_absolute() else Path(cfg["_base_dir"]) / p


def _dataclass_kwargs(cls, section: dict, where: str, skip=()) -> dict:
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for k, v in section.items():
        if k in skip:
            continue
        if k not in names:
            raise ConfigError(f"{where}: unknown key {k!r}")
        kwargs[k] = v
    return kwargs


ENV_KEYS_ELSEWHERE = ("network", "scenarios", "stations", "train_fraction")


def env_config(cfg: dict) -> EnvConfig:
    try:
        return EnvConfig(**_dataclass_kwargs(EnvConfig, cfg["env"], f"{cfg['_source']} [env]",
                                             ENV_KEYS_ELSEWHERE))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg['_source']} [env]: {exc}") from None


def train_config(cfg: dict, seed: int = None, **overrides) -> TrainConfig:
    section = dict(cfg["train"])
    section.pop("algorithm", None)
    section.update(overrides)
    if seed is not None:
        section["seed"] = seed
    try:
        return TrainConfig(**_dataclass_kwargs(TrainConfig, section, f"{cfg['_source']} [train]"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg['_source']} [train]: {exc}") from None


def stations(cfg: dict) -> tuple:
    out = []
    for i, st in enumerate(cfg["env"]["stations"]):
        try:
            out.append(StationConfig(int(st["bus"]), int(st.get("chargers", 5)), float(st.get("pv_kwp", 13.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{cfg['_source']} [env.stations][{i}]: {exc}") from None
    return tuple(out)


def network(cfg: dict) -> RadialNetwork:
    return load_network(_resolve(cfg, cfg["env"]["network"], {"bundled:ieee33": BUNDLED_33BUS}))


def scenarios(cfg: dict) -> list:
    return load_scenarios(_resolve(cfg, cfg["env"]["scenarios"], {"bundled": BUNDLED_SCENARIOS}))


@dataclass(frozen=True)
class ExperimentSpec:
    algorithm: str
    config_path: str
    seeds: tuple
    out_dir: str

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list is empty")
