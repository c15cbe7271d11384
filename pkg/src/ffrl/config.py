"""Run configuration: one YAML tree, validated up front, with env-var overrides.

Sections mirror the library dataclasses (``env``, ``reward``, ``ppo``) plus
``curriculum``, ``train`` and ``eval`` settings. Unknown keys are rejected so
a typo never silently falls back to a default. ``FFRL_<SECTION>_<KEY>``
environment variables override file values, e.g. ``FFRL_PPO_GAMMA=0.995``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import asdict, dataclass, field

import yaml

from ffrl.curriculum import DEFAULT_LADDER, NUM_LEVELS, ladder_from_csv, truncate, variant_curriculum
from ffrl.env import EnvConfig, RewardConfig, SuccessCriterion
from ffrl.ppo import PpoHyper
from ffrl.sixdof import BASE_MASS

CURRICULUM_MODES = ("off", "table1", "table1-with-mass-override")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending ``section.key``."""


@dataclass
class CurriculumSettings:
    mode: str = "table1"
    max_level: int = NUM_LEVELS
    mass_override: float = BASE_MASS
    reward_threshold: float = 1.5
    hold_steps: int = 550
    # optional CSV ladder replacing the embedded table
    ladder_csv: str = ""

    def __post_init__(self):
        if self.mode not in CURRICULUM_MODES:
            raise ValueError(f"mode must be one of {', '.join(CURRICULUM_MODES)}")
        if not 1 <= self.max_level <= NUM_LEVELS:
            raise ValueError(f"max_level must be in 1..{NUM_LEVELS}")
        if self.hold_steps < 1:
            raise ValueError("hold_steps must be >= 1")
        if self.mass_override < 0:
            raise ValueError("mass_override must be >= 0")

    def ladder(self):
        if self.mode == "off":
            return None
        base = DEFAULT_LADDER
        if self.ladder_csv:
            with open(self.ladder_csv) as f:
                base = ladder_from_csv(f.read())
        if self.mode == "table1-with-mass-override":
            base = variant_curriculum(base, self.mass_override)
        return truncate(base, min(self.max_level, len(base)))


@dataclass
class TrainSettings:
    n_envs: int = 256
    iterations: int = 500
    workers: int = 1
    # scalar or one value per action dimension
    init_log_std: object = 0.0
    checkpoint_every: int = 0
    record_wall_ms: bool = False
    stagger_episodes: bool = True
    # per-feature observation multiplier (13 values) or null
    obs_scale: object = None

    def __post_init__(self):
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if isinstance(self.init_log_std, (list, tuple)):
            if len(self.init_log_std) != 6:
                raise ValueError("init_log_std must be a scalar or a list of 6 values")
            self.init_log_std = [float(v) for v in self.init_log_std]
        else:
            self.init_log_std = float(self.init_log_std)
        if self.obs_scale is not None:
            if not isinstance(self.obs_scale, (list, tuple)) or len(self.obs_scale) != 13:
                raise ValueError("obs_scale must be null or a list of 13 values")
            self.obs_scale = [float(v) for v in self.obs_scale]
            if min(self.obs_scale) <= 0:
                raise ValueError("obs_scale entries must be positive")


@dataclass
class EvalSettings:
    n_envs: int = 1000
    seeds: list = field(default_factory=lambda: list(range(10)))
    pos_R: float = 0.5
    ori_R: float = 0.5
    mass_conditions: list = field(default_factory=lambda: [0.0, 2.0, BASE_MASS])
    pos_tol: float = 0.1
    ori_tol_deg: float = 20.0
    # >1 requires the tolerance to hold over the final steps
    hold_steps: int = 0

    def __post_init__(self):
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        self.seeds = [int(s) for s in self.seeds]
        self.mass_conditions = [float(m) for m in self.mass_conditions]
        if any(m < 0 for m in self.mass_conditions):
            raise ValueError("mass_conditions must be >= 0")
        if min(self.pos_R, self.ori_R) < 0:
            raise ValueError("pos_R must be >= 0 and ori_R must be >= 0")
        SuccessCriterion(self.pos_tol, self.ori_tol_deg)

    def criterion(self):
        return SuccessCriterion(self.pos_tol, self.ori_tol_deg)


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoHyper = field(default_factory=PpoHyper)
    curriculum: CurriculumSettings = field(default_factory=CurriculumSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    seed: int = 0
    output_dir: str = "runs"
    tag: str = "run"

    def to_dict(self):
        d = asdict(self)
        d["env"]["baseline_goal"] = list(d["env"]["baseline_goal"])
        return d


SECTIONS = {
    "env": EnvConfig,
    "reward": RewardConfig,
    "ppo": PpoHyper,
    "curriculum": CurriculumSettings,
    "train": TrainSettings,
    "eval": EvalSettings,
}
TOP_LEVEL = {"seed": int, "output_dir": str, "tag": str}


def _coerce(value, default, where):
    """Convert ``value`` to the type of ``default``; strings come from env vars."""
    kind = type(default)
    if isinstance(value, str) and kind is not str:
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as e:
            raise ConfigError(f"{where}: cannot parse {value!r}") from e
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if kind in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return kind(value)
    return value


def _field_message(section, cls, err):
    msg = str(err)
    names = [f.name for f in dataclasses.fields(cls)]
    for name in sorted(names, key=len, reverse=True):
        if msg.startswith(name):
            return f"{section}.{msg}"
    return f"{section}: {msg}"


def _build_section(section, cls, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    defaults = cls()
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in types:
            raise ConfigError(f"unknown key '{section}.{key}'")
        if types[key] in ("object", object):
            kwargs[key] = yaml.safe_load(value) if isinstance(value, str) else value
        else:
            kwargs[key] = _coerce(value, getattr(defaults, key), f"{section}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(_field_message(section, cls, e)) from e


def _apply_env_overrides(raw, environ):
    for name, value in environ.items():
        if not name.startswith("FFRL_"):
            continue
        rest = name[len("FFRL_"):].lower()
        for top in TOP_LEVEL:
            if rest == top:
                raw[top] = value
                break
        else:
            section, _, key = rest.partition("_")
            if section not in SECTIONS or not key:
                raise ConfigError(f"environment override {name} does not name a config field")
            sect = raw.setdefault(section, {}) or {}
            raw[section] = sect
            sect[key] = value
    return raw


def config_from_dict(raw, environ=None):
    """Validate a parsed tree (plus optional env overrides) into a RunConfig."""
    raw = dict(raw or {})
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    if environ is not None:
        raw = _apply_env_overrides(raw, environ)
    for key in raw:
        if key not in SECTIONS and key not in TOP_LEVEL:
            raise ConfigError(f"unknown key '{key}'")
    kwargs = {name: _build_section(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    defaults = RunConfig()
    for key in TOP_LEVEL:
        if key in raw:
            kwargs[key] = _coerce(raw[key], getattr(defaults, key), key)
    cfg = RunConfig(**kwargs)
    if cfg.env.baseline_goal is not None and len(cfg.env.baseline_goal) != 3:
        raise ConfigError("env.baseline_goal must have 3 entries")
    return cfg


def load_config(path, environ=None):
    """Read a YAML config file. ``environ`` defaults to ``os.environ``."""
    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, os.environ if environ is None else environ)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
