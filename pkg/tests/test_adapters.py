import builtins
import importlib.util

import numpy as np
import pytest

from ocgvf.envs import EnvSpec, LevelSchedule, make_env, preprocess, set_level_sequence
from ocgvf.envs.adapters import ProcgenEnv, _require
from ocgvf.errors import ConfigurationError, DependencyError, UsageError

HAS_MINIGRID = importlib.util.find_spec("minigrid") is not None
HAS_PROCGEN = importlib.util.find_spec("procgen") is not None


class FakeProcgen:
    """gym3-like stub: episode of ``length`` steps; frame value encodes the level."""

    built = []

    def __init__(self, game, start_level, num_levels, distribution_mode, seed, length=3):
        FakeProcgen.built.append((start_level, num_levels, distribution_mode))
        self.level = start_level
        self.length = length
        self.t = 0

    def _frame(self):
        return np.full((1, 64, 64, 3), 10 * self.level + self.t, dtype=np.uint8)

    def observe(self):
        return np.array([1.0 if self.t == 0 else 0.0]), {"rgb": self._frame()}, np.array([self.t == 0])

    def act(self, action):
        self.t = (self.t + 1) % self.length


def fake_factory(*args):
    return FakeProcgen(*args)


def procgen(schedule, resolution=64, seed=0):
    return ProcgenEnv(EnvSpec("coinrun", resolution, schedule, seed), backend_factory=fake_factory)


def play(env):
    obs, done, n = env.reset(), False, 0
    while not done:
        obs, _, done = env.step(0)
        n += 1
    return n


def test_preprocess_idempotent_and_range():
    rng = np.random.default_rng(0)
    frame = rng.integers(0, 256, (96, 80, 3)).astype(np.uint8)
    once = preprocess(frame, 32)
    assert once.shape == (32, 32, 3) and once.dtype == np.float32
    assert 0.0 <= once.min() and once.max() <= 1.0
    assert np.array_equal(preprocess(once, 32), once)


def test_preprocess_rejects_bad_shape():
    with pytest.raises(ValueError):
        preprocess(np.zeros((8, 8)), 32)


def test_envspec_validation():
    with pytest.raises(ConfigurationError):
        EnvSpec("coinrun", resolution=48)
    with pytest.raises(ConfigurationError):
        EnvSpec("coinrun", distribution_mode="medium")
    with pytest.raises(ConfigurationError):
        make_env(EnvSpec("pong"))


def test_level_schedule():
    assert [LevelSchedule("fixed", (4,)).level_for_episode(e) for e in range(3)] == [4, 4, 4]
    seq = LevelSchedule("sequence", (0, 2, 3), switch_episodes=(3, 5))
    assert [seq.level_for_episode(e) for e in range(7)] == [0, 0, 0, 2, 2, 3, 3]
    every = LevelSchedule("sequence", (0, 2, 3))
    assert [every.level_for_episode(e) for e in range(5)] == [0, 2, 3, 3, 3]
    with pytest.raises(ConfigurationError):
        LevelSchedule("sequence", ())
    with pytest.raises(ConfigurationError):
        LevelSchedule("sequence", (0, 1), switch_episodes=(1, 2))


def test_procgen_fixed_level_replays():
    FakeProcgen.built.clear()
    env = procgen(LevelSchedule("fixed", (0,)))
    firsts = []
    for _ in range(3):
        firsts.append(env.reset())
        done = False
        while not done:
            _, _, done = env.step(1)
    assert all(np.array_equal(firsts[0], f) for f in firsts)
    assert env.current_level == 0
    assert {b[0] for b in FakeProcgen.built} == {0}


def test_procgen_sampler_uses_level_range():
    FakeProcgen.built.clear()
    env = procgen(LevelSchedule("sampler", (0,), num_levels=50), seed=1)
    play(env)
    play(env)
    assert FakeProcgen.built[0][:2] == (0, 50)
    assert len(FakeProcgen.built) == 1  # procgen itself resamples per episode


def test_procgen_sequence_switches():
    env = procgen(LevelSchedule("sequence", (0, 2, 3), switch_episodes=(1, 2)))
    levels = []
    for _ in range(4):
        play(env)
        levels.append(env.current_level)
    assert levels == [0, 2, 3, 3]


def test_set_level_sequence():
    env = procgen(LevelSchedule("sequence", (0,)))
    set_level_sequence(env, [5])
    play(env)
    play(env)
    assert env.current_level == 5
    with pytest.raises(ConfigurationError):
        set_level_sequence(env, [])
    with pytest.raises(UsageError):
        set_level_sequence(procgen(LevelSchedule("fixed", (0,))), [1, 2])


def test_procgen_observation_contract():
    env = procgen(LevelSchedule("fixed", (1,)), resolution=32)
    obs = env.reset()
    assert obs.shape == (32, 32, 3) and obs.min() >= 0.0 and obs.max() <= 1.0
    assert np.allclose(obs, 10 / 255.0)


def test_procgen_step_after_done():
    env = procgen(LevelSchedule("fixed", (0,)))
    play(env)
    with pytest.raises(UsageError):
        env.step(0)


def test_missing_dependency_is_named(monkeypatch):
    real_import = builtins.__import__

    def fake_import(name, *args, **kwargs):
        if name.startswith("nonexistent_pkg"):
            raise ImportError(name)
        return real_import(name, *args, **kwargs)

    monkeypatch.setattr(builtins, "__import__", fake_import)
    with pytest.raises(DependencyError, match="nonexistent_pkg"):
        _require("nonexistent_pkg", "nonexistent_pkg", "testing")


@pytest.mark.skipif(not HAS_MINIGRID, reason="minigrid not installed")
def test_minigrid_adapter():
    env = make_env(EnvSpec("minigrid_dynamic_obstacles", 32, seed=0))
    obs = env.reset()
    assert obs.shape == (32, 32, 3) and 0.0 <= obs.min() and obs.max() <= 1.0
    obs2, r, done = env.step(2)
    assert obs2.shape == (32, 32, 3) and isinstance(r, float) and isinstance(done, bool)
    again = make_env(EnvSpec("minigrid_dynamic_obstacles", 32, seed=0)).reset()
    assert np.array_equal(obs, again)


@pytest.mark.skipif(not HAS_PROCGEN, reason="procgen not installed")
def test_real_coinrun_shapes():
    env = make_env(EnvSpec("coinrun", 64, LevelSchedule("fixed", (0,)), seed=0))
    a = env.reset()
    b, r, done = env.step(0)
    assert a.shape == b.shape == (64, 64, 3)
    env2 = make_env(EnvSpec("coinrun", 64, LevelSchedule("fixed", (0,)), seed=0))
    assert np.array_equal(env2.reset(), a)
