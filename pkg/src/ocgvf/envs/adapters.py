"""Thin wrappers giving MiniGrid and ProcGen the Collect Objects reset/step contract.

All third-party environment calls live in this module. Observations come out
channels-last, resized to the requested square resolution, as float32 in [0, 1].
Rewards pass through unchanged.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from PIL import Image

from ocgvf.errors import ConfigurationError, DependencyError, UsageError

MINIGRID_DEFAULT = "MiniGrid-Dynamic-Obstacles-5x5-v0"
PROCGEN_GAMES = ("coinrun", "starpilot")
ENV_IDS = ("collect_objects", "minigrid_dynamic_obstacles", "coinrun", "starpilot")
RESOLUTIONS = (32, 64)
DISTRIBUTION_MODES = ("easy", "hard")


@dataclass
class LevelSchedule:
    """How ProcGen levels are chosen per episode.

    kind "fixed" replays ``levels[0]``; "sampler" draws uniformly from
    ``num_levels`` consecutive levels starting at ``levels[0]`` each episode;
    "sequence" walks ``levels`` in order, switching at ``switch_episodes``
    (one episode index per transition, default: every episode).
    """

    kind: str = "fixed"
    levels: tuple[int, ...] = (0,)
    num_levels: int = 1
    switch_episodes: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.kind not in ("fixed", "sampler", "sequence"):
            raise ConfigurationError(f"unknown level schedule kind {self.kind!r}")
        if not self.levels:
            raise ConfigurationError("level schedule needs at least one level")
        if any(int(l) < 0 for l in self.levels):
            raise ConfigurationError(f"level ids must be non-negative, got {self.levels}")
        if self.kind == "sampler" and self.num_levels < 1:
            raise ConfigurationError("sampler schedule needs num_levels >= 1")
        if self.switch_episodes is not None:
            if len(self.switch_episodes) != len(self.levels) - 1:
                raise ConfigurationError("switch_episodes needs exactly len(levels) - 1 entries")
            if list(self.switch_episodes) != sorted(self.switch_episodes):
                raise ConfigurationError("switch_episodes must be increasing")

    def level_for_episode(self, episode: int) -> int:
        if self.kind != "sequence":
            return int(self.levels[0])
        if self.switch_episodes is None:
            return int(self.levels[min(episode, len(self.levels) - 1)])
        idx = sum(1 for s in self.switch_episodes if episode >= s)
        return int(self.levels[idx])


@dataclass
class EnvSpec:
    env_id: str
    resolution: int = 32
    level_schedule: Optional[LevelSchedule] = None
    seed: int = 0
    distribution_mode: str = "easy"
    minigrid_id: str = MINIGRID_DEFAULT

    def __post_init__(self):
        if self.resolution not in RESOLUTIONS:
            raise ConfigurationError(f"resolution must be one of {RESOLUTIONS}, got {self.resolution}")
        if self.distribution_mode not in DISTRIBUTION_MODES:
            raise ConfigurationError(f"distribution_mode must be one of {DISTRIBUTION_MODES}")


def preprocess(frame: np.ndarray, resolution: int) -> np.ndarray:
    """Resize an RGB frame to ``resolution`` x ``resolution`` floats in [0, 1].

    Frames that already satisfy the contract are returned unchanged.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[-1] != 3:
        raise ValueError(f"expected an H x W x 3 frame, got shape {frame.shape}")
    if np.issubdtype(frame.dtype, np.floating):
        if frame.shape[:2] == (resolution, resolution) and frame.min() >= 0.0 and frame.max() <= 1.0:
            return frame.astype(np.float32, copy=False)
        frame = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    else:
        frame = frame.astype(np.uint8)
    if frame.shape[:2] != (resolution, resolution):
        frame = np.asarray(Image.fromarray(frame).resize((resolution, resolution), Image.BILINEAR))
    return frame.astype(np.float32) / 255.0


def _require(module: str, package: str, purpose: str):
    try:
        return importlib.import_module(module)
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise DependencyError(package, purpose) from exc


class MiniGridEnv:
    """Fully observed pixel rendering of a MiniGrid task."""

    def __init__(self, spec: EnvSpec):
        gym = _require("gymnasium", "gymnasium", spec.env_id)
        _require("minigrid", "minigrid", spec.env_id)
        try:
            self._env = gym.make(spec.minigrid_id, render_mode="rgb_array")
        except Exception as exc:
            raise ConfigurationError(f"cannot create MiniGrid env {spec.minigrid_id!r}: {exc}") from exc
        self.spec = spec
        self.resolution = spec.resolution
        self.num_actions = int(self._env.action_space.n)
        self._seeded = False
        self._done = True

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is None and not self._seeded:
            seed = self.spec.seed
        self._env.reset(seed=seed)
        self._seeded = True
        self._done = False
        return preprocess(self._env.render(), self.resolution)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise UsageError("step() called after the episode finished; call reset()")
        _, reward, terminated, truncated, _ = self._env.step(int(action))
        self._done = bool(terminated or truncated)
        return preprocess(self._env.render(), self.resolution), float(reward), self._done

    def get_state(self) -> dict:
        return {"np_random": self._env.unwrapped.np_random.bit_generator.state, "seeded": self._seeded}

    def set_state(self, snap: dict) -> None:
        self._env.reset(seed=self.spec.seed)
        self._env.unwrapped.np_random.bit_generator.state = snap["np_random"]
        self._seeded = snap["seeded"]
        self._done = True


def _procgen_backend(game: str, start_level: int, num_levels: int, distribution_mode: str, seed: int):
    procgen = _require("procgen", "procgen", game)
    return procgen.ProcgenGym3Env(
        num=1,
        env_name=game,
        start_level=int(start_level),
        num_levels=int(num_levels),
        distribution_mode=distribution_mode,
        rand_seed=int(seed),
    )


class ProcgenEnv:
    """Single ProcGen game with a level schedule.

    ``backend_factory(game, start_level, num_levels, distribution_mode, seed)``
    must return a gym3-style environment (``observe``/``act``).
    """

    num_actions = 15

    def __init__(self, spec: EnvSpec, backend_factory: Callable = _procgen_backend):
        if spec.env_id not in PROCGEN_GAMES:
            raise ConfigurationError(f"{spec.env_id!r} is not a supported ProcGen game")
        self.spec = spec
        self.resolution = spec.resolution
        self.schedule = spec.level_schedule or LevelSchedule()
        self._factory = backend_factory
        self._env = None
        self._level: Optional[int] = None
        self._episode = 0
        self._pending: Optional[np.ndarray] = None
        self._done = True

    @property
    def current_level(self) -> Optional[int]:
        return self._level

    def _build(self, level: int):
        if self.schedule.kind == "sampler":
            start, count = self.schedule.levels[0], self.schedule.num_levels
        else:
            start, count = level, 1
        try:
            self._env = self._factory(
                self.spec.env_id, start, count, self.spec.distribution_mode, self.spec.seed + self._episode
            )
        except DependencyError:
            raise
        except Exception as exc:
            raise ConfigurationError(f"invalid level {level} for {self.spec.env_id}: {exc}") from exc
        self._level = level
        _, obs, _ = self._env.observe()
        self._pending = obs["rgb"][0]

    def set_level_sequence(self, levels: Sequence[int], switch_episodes: Optional[Sequence[int]] = None) -> None:
        if self.schedule.kind != "sequence":
            raise UsageError("set_level_sequence needs a handle created with a 'sequence' schedule")
        self.schedule = LevelSchedule(
            "sequence",
            tuple(int(l) for l in levels),
            switch_episodes=None if switch_episodes is None else tuple(int(s) for s in switch_episodes),
        )
        self._env = None

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        level = self.schedule.level_for_episode(self._episode)
        if self._env is None or (self.schedule.kind != "sampler" and level != self._level):
            self._build(level)
        elif self._pending is None:
            # mid-episode reset: rebuild so the episode really starts over
            self._build(level)
        obs = self._pending
        self._pending = None
        self._episode += 1
        self._done = False
        return preprocess(obs, self.resolution)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise UsageError("step() called after the episode finished; call reset()")
        self._env.act(np.array([int(action)]))
        rew, obs, first = self._env.observe()
        frame = obs["rgb"][0]
        self._done = bool(first[0])
        if self._done:
            # gym3 auto-resets: the returned frame already starts the next episode
            self._pending = frame
        return preprocess(frame, self.resolution), float(rew[0]), self._done

    def get_state(self) -> dict:
        return {"episode": self._episode}

    def set_state(self, snap: dict) -> None:
        self._episode = snap["episode"]
        self._env = None
        self._done = True


def make_env(spec: EnvSpec, **kwargs):
    """Create an environment handle for ``spec.env_id``."""
    if spec.env_id == "collect_objects":
        from ocgvf.envs.collect_objects import CollectObjects

        return CollectObjects(resolution=spec.resolution, seed=spec.seed, **kwargs)
    if spec.env_id == "minigrid_dynamic_obstacles" or spec.env_id.startswith("MiniGrid-"):
        if spec.env_id.startswith("MiniGrid-"):
            spec.minigrid_id = spec.env_id
        return MiniGridEnv(spec)
    if spec.env_id in PROCGEN_GAMES:
        return ProcgenEnv(spec, **kwargs)
    raise ConfigurationError(f"unknown env_id {spec.env_id!r}; expected one of {ENV_IDS}")


def set_level_sequence(handle, levels: Sequence[int], switch_episodes: Optional[Sequence[int]] = None) -> None:
    if not levels:
        raise ConfigurationError("level sequence must not be empty")
    if not isinstance(handle, ProcgenEnv):
        raise ConfigurationError("level sequences are only supported for ProcGen environments")
    handle.set_level_sequence(levels, switch_episodes)
