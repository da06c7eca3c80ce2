"""Experiment configuration: flat ``key: value`` text files keyed like the hyper-parameter table.

Every environment has its own default block; files only need to list overrides.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from ocgvf.errors import ConfigurationError

# keys taken verbatim from the published hyper-parameter table
TABLE_KEYS = (
    "train_episodes", "batch_size", "target_period", "replay_capacity", "hidden_arch",
    "epsilon_begin", "epsilon_end", "epsilon_steps", "discount_factor", "learning_rate",
    "eval_episodes", "evaluate_every", "num_gvfs", "unroll_steps",
    "sa_batch_size", "sa_resolution", "sa_num_slots", "sa_num_iterations", "sa_learning_rate",
    "sa_num_train_steps", "sa_warmup_steps", "sa_decay_rate", "sa_decay_steps",
)

_COMMON = dict(
    train_episodes=5000, batch_size=32, target_period=100, replay_capacity=100000,
    hidden_arch=[64, 32], epsilon_begin=1.0, epsilon_end=0.01, epsilon_steps=0.8,
    discount_factor=0.99, learning_rate=0.0001, eval_episodes=100, evaluate_every=50,
    num_gvfs=5, unroll_steps=10,
    sa_batch_size=16, sa_resolution=32, sa_num_slots=5, sa_num_iterations=3,
    sa_learning_rate=0.0004, sa_num_train_steps=200000, sa_warmup_steps=10000,
    sa_decay_rate=0.5, sa_decay_steps=100000,
)

TABLE_DEFAULTS = {
    "collect_objects": dict(_COMMON),
    "coinrun": dict(_COMMON, replay_capacity=10000, sa_resolution=64, sa_num_train_steps=100000),
    "minigrid_dynamic_obstacles": dict(_COMMON, epsilon_end=0.001, epsilon_steps=0.6, sa_num_train_steps=400000),
}
# StarPilot has no published block; it shares CoinRun's
TABLE_DEFAULTS["starpilot"] = dict(TABLE_DEFAULTS["coinrun"])


@dataclass
class ExperimentConfig:
    env: str = "collect_objects"
    algo: str = "oc_gvf"
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    # published hyper-parameters (defaults: Collect Objects block)
    train_episodes: int = 5000
    batch_size: int = 32
    target_period: int = 100
    replay_capacity: int = 100000
    hidden_arch: list = field(default_factory=lambda: [64, 32])
    epsilon_begin: float = 1.0
    epsilon_end: float = 0.01
    epsilon_steps: float = 0.8
    discount_factor: float = 0.99
    learning_rate: float = 0.0001
    eval_episodes: int = 100
    evaluate_every: int = 50
    num_gvfs: int = 5
    unroll_steps: int = 10
    sa_batch_size: int = 16
    sa_resolution: int = 32
    sa_num_slots: int = 5
    sa_num_iterations: int = 3
    sa_learning_rate: float = 0.0004
    sa_num_train_steps: int = 200000
    sa_warmup_steps: int = 10000
    sa_decay_rate: float = 0.5
    sa_decay_steps: int = 100000

    # Collect Objects task
    mode: str = "stationary"
    objects: str = "default"  # "default" (red, blue, green) or "two" (red, blue)
    max_steps: int = 100
    respawn_period: int = 1
    grid_size: int = 11
    transfer_episode: Optional[int] = None  # transfer mode: add a random red object from this episode on

    # ProcGen / MiniGrid
    distribution_mode: str = "easy"
    level_schedule: str = "fixed"  # fixed | sampler | sequence
    levels: list = field(default_factory=lambda: [0])
    num_levels: int = 1
    switch_episodes: Optional[list] = None
    minigrid_id: str = "MiniGrid-Dynamic-Obstacles-5x5-v0"

    # architecture / algorithm choices not fixed by the table
    slot_dim: int = 64
    slot_init: str = "learned"
    slot_schedule: str = "interleaved"  # or "pretrain"
    projection_dim: int = 64
    gvf_hidden: int = 32
    question_hidden: int = 32
    meta_learning_rate: float = 0.0001
    inner_optimizer: str = "adam"
    meta_track: str = "auto"
    outer_includes_gvf: bool = False
    cumulant_alignment: str = "state"
    random_cumulant_mode: str = "fixed_random_net"
    warm_start: int = 1000

    # run control
    episode_step_limit: Optional[int] = None  # truncate episodes (smoke tests); None keeps the env's own limit
    checkpoint_every: int = 0
    determinism: bool = True
    eval_seed_offset: int = 10000

    # ------------------------------------------------------------------ helpers
    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def for_env(cls, env: str, **overrides) -> "ExperimentConfig":
        if env not in TABLE_DEFAULTS:
            raise ConfigurationError(f"unknown env {env!r}; expected one of {sorted(TABLE_DEFAULTS)}")
        values = dict(TABLE_DEFAULTS[env])
        values["env"] = env
        values.update(overrides)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict, source: str = "<dict>") -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigurationError(f"{source}: unknown key {key!r}")
        base = cls()
        env = values.get("env", base.env)
        if env not in TABLE_DEFAULTS:
            raise ConfigurationError(f"{source}: env: unknown env {env!r}")
        merged = {**dataclasses.asdict(base), **TABLE_DEFAULTS[env], **values}
        out = {}
        for key, val in merged.items():
            out[key] = _coerce(key, val, known[key], base, source)
        cfg = cls(**out)
        cfg.validate(source)
        return cfg

    def validate(self, source: str = "<config>") -> None:
        choices = {
            "mode": ("stationary", "nonstationary", "transfer"),
            "objects": ("default", "two"),
            "distribution_mode": ("easy", "hard"),
            "level_schedule": ("fixed", "sampler", "sequence"),
            "slot_init": ("learned", "random"),
            "slot_schedule": ("interleaved", "pretrain"),
            "inner_optimizer": ("adam", "sgd"),
            "meta_track": ("auto", "all", "heads", "heads+encoder"),
            "cumulant_alignment": ("state", "next"),
            "random_cumulant_mode": ("fixed_random_net", "iid_uniform"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigurationError(f"{source}: {key}: {getattr(self, key)!r} not in {allowed}")
        positive = ("train_episodes", "batch_size", "target_period", "replay_capacity", "eval_episodes",
                    "evaluate_every", "num_gvfs", "unroll_steps", "sa_batch_size", "sa_num_slots",
                    "sa_num_iterations", "sa_decay_steps", "max_steps", "respawn_period")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigurationError(f"{source}: {key}: must be >= 1")
        if self.episode_step_limit is not None and self.episode_step_limit < 1:
            raise ConfigurationError(f"{source}: episode_step_limit: must be >= 1")
        if self.sa_resolution not in (32, 64):
            raise ConfigurationError(f"{source}: sa_resolution: must be 32 or 64")
        if not 0.0 <= self.discount_factor <= 1.0:
            raise ConfigurationError(f"{source}: discount_factor: must lie in [0, 1]")
        if not self.seeds:
            raise ConfigurationError(f"{source}: seeds: need at least one seed")

    def table_values(self) -> dict:
        return {k: getattr(self, k) for k in TABLE_KEYS}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for key in self.keys():
            lines.append(f"{key}: {json.dumps(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "ExperimentConfig":
        return cls.from_dict(parse_text(text, source), source)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), str(path))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return type(self).from_dict(d)


def parse_text(text: str, source: str = "<text>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key: value', got {raw.strip()!r}")
        key, val = line.split(":", 1)
        key = key.strip()
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = yaml.safe_load(val.strip()) if val.strip() else None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{source}:{lineno}: {key}: cannot parse value {val.strip()!r}") from exc
    return values


def _coerce(key: str, val: Any, f: dataclasses.Field, base: ExperimentConfig, source: str):
    default = getattr(base, key)
    optional = default is None
    if val is None:
        if optional:
            return None
        raise ConfigurationError(f"{source}: {key}: value required")
    expected = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if "bool" in expected:
        if not isinstance(val, bool):
            raise ConfigurationError(f"{source}: {key}: expected true/false, got {val!r}")
        return val
    if "list" in expected:
        if not isinstance(val, (list, tuple)):
            raise ConfigurationError(f"{source}: {key}: expected a list, got {val!r}")
        return list(val)
    if "int" in expected:
        if isinstance(val, bool) or not isinstance(val, (int, float)) or float(val) != int(val):
            raise ConfigurationError(f"{source}: {key}: expected an integer, got {val!r}")
        return int(val)
    if "float" in expected:
        if isinstance(val, str):
            # YAML 1.1 reads exponent forms like 1e-05 as strings
            try:
                return float(val)
            except ValueError:
                pass
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigurationError(f"{source}: {key}: expected a number, got {val!r}")
        return float(val)
    if "str" in expected:
        if not isinstance(val, str):
            raise ConfigurationError(f"{source}: {key}: expected a string, got {val!r}")
        return val
    return val
