"""Episode loop: epsilon-greedy rollouts, per-step inner updates, slot training,
end-of-episode meta updates, periodic greedy evaluation, JSON-lines logging and
resumable checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

import ocgvf
from ocgvf.baselines import Agent, get_variant, make_agent
from ocgvf.config import ExperimentConfig
from ocgvf.envs.adapters import EnvSpec, LevelSchedule, ProcgenEnv, make_env
from ocgvf.envs.collect_objects import DEFAULT_OBJECTS, TWO_OBJECTS, CollectObjects, ObjectSpec, TaskSpec, handcrafted_features
from ocgvf.errors import TrainingAborted
from ocgvf.meta import BatchTensors, epsilon_at
from ocgvf.replay import ReplayBuffer, Transition

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ocgvf-checkpoint"
CHECKPOINT_VERSION = 1
LOG_FIELDS = ("episode", "global_step", "train_return", "eval_return_mean", "eval_return_se",
              "gvf_loss", "ddqn_loss", "recon_loss", "epsilon", "wall_time")


def build_env(config: ExperimentConfig, seed: int):
    if config.env == "collect_objects":
        objects = DEFAULT_OBJECTS if config.objects == "default" else TWO_OBJECTS
        return CollectObjects(objects, mode=config.mode, resolution=config.sa_resolution,
                              max_steps=config.max_steps, respawn_period=config.respawn_period,
                              grid_size=config.grid_size, seed=seed)
    schedule = None
    if config.env in ("coinrun", "starpilot"):
        schedule = LevelSchedule(
            config.level_schedule, tuple(config.levels), num_levels=config.num_levels,
            switch_episodes=None if config.switch_episodes is None else tuple(config.switch_episodes),
        )
    spec = EnvSpec(config.env, config.sa_resolution, schedule, seed, config.distribution_mode, config.minigrid_id)
    return make_env(spec)


def standard_error(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def _mean_or_none(xs):
    return float(np.mean(xs)) if xs else None


class Trainer:
    """One (config, seed) training run writing into ``out_dir``."""

    def __init__(self, config: ExperimentConfig, seed: int, out_dir, env_factory: Optional[Callable] = None):
        self.config = config
        self.seed = int(seed)
        self.out_dir = Path(out_dir)
        self.variant = get_variant(config.algo)
        if config.determinism:
            torch.use_deterministic_algorithms(True)
            torch.set_num_threads(1)
        torch.manual_seed(self.seed)
        factory = env_factory or build_env
        self.env = factory(config, self.seed)
        self.eval_env = factory(config, self.seed + config.eval_seed_offset)
        self.num_actions = int(self.env.num_actions)
        self.agent: Agent = make_agent(self.variant, config, self.num_actions, seed=self.seed)
        self.handcrafted = self.variant.cumulant_source == "handcrafted"
        res = config.sa_resolution
        self.replay = ReplayBuffer(config.replay_capacity, (res, res, 3), extras_dim=5 if self.handcrafted else 0)
        self.act_rng = np.random.default_rng([self.seed, 1])
        self.replay_rng = np.random.default_rng([self.seed, 2])
        self.task_rng = np.random.default_rng([self.seed, 3])
        self.episode = 0
        self.global_step = 0
        self.rows: list[dict] = []
        self.start_wall = time.time()

    # ------------------------------------------------------------------ pieces
    @property
    def learner(self):
        return self.agent.learner

    def epsilon(self, episode: int) -> float:
        c = self.config
        return epsilon_at(episode, c.epsilon_begin, c.epsilon_end, c.epsilon_steps, c.train_episodes)

    def _apply_schedule(self, episode: int) -> None:
        """Task changes that happen at fixed episode indices (0-based)."""
        c = self.config
        if c.env == "collect_objects" and c.mode == "transfer" and c.transfer_episode is not None:
            if episode == c.transfer_episode:
                room = int(self.task_rng.integers(4))
                self.env.set_task(TaskSpec(add=(ObjectSpec("red", room),)))
                added = self.env.object_specs[-1]
                self.eval_env.set_task(TaskSpec(add=(added,)))

    def _slot_step(self) -> Optional[float]:
        trainer = self.agent.slot_trainer
        if trainer is None or trainer.finished:
            return None
        batch = self.replay.sample_batch(self.config.sa_batch_size, self.replay_rng)
        if batch is None:
            return None
        return trainer.train_step(torch.as_tensor(batch.s))

    def _dump_abort(self, exc: Exception, batch) -> Path:
        dump = {"error": str(exc), "episode": self.episode, "global_step": self.global_step,
                "param_norms": {n: float(p.detach().norm()) for n, p in self.learner.params.items()}}
        if batch is not None:
            dump["batch"] = {
                "s_min": float(batch.s.min()), "s_max": float(batch.s.max()),
                "rewards": batch.r.tolist(), "actions": batch.a.tolist(), "done": batch.done.tolist(),
            }
        path = self.out_dir / "abort_dump.json"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dump, indent=1))
        return path

    def evaluate(self) -> tuple[float, float]:
        returns = []
        if isinstance(self.env, ProcgenEnv) and self.env.schedule.kind == "sequence":
            level = self.env.current_level
            if level is not None and getattr(self.eval_env, "current_level", None) != level:
                self.eval_env.schedule = LevelSchedule("fixed", (level,))
                self.eval_env._env = None
        limit = self.config.episode_step_limit
        for _ in range(self.config.eval_episodes):
            obs, done, total, steps = self.eval_env.reset(), False, 0.0, 0
            while not done and (limit is None or steps < limit):
                a = int(self.learner.q_values(obs).argmax(dim=-1)[0])
                obs, r, done = self.eval_env.step(a)
                total += r
                steps += 1
            returns.append(total)
        return float(np.mean(returns)), standard_error(returns)

    # ------------------------------------------------------------------ loop
    def run_episode(self) -> dict:
        c = self.config
        self._apply_schedule(self.episode)
        eps = self.epsilon(self.episode)
        obs = self.env.reset()
        done, total, step = False, 0.0, 0
        limit = c.episode_step_limit
        gvf_losses, ddqn_losses, recon_losses = [], [], []
        while not done and (limit is None or step < limit):
            a = self.learner.act(obs, eps, self.act_rng)
            obs_next, r, done = self.env.step(a)
            extras = None
            if self.handcrafted:
                extras = handcrafted_features(self.env.layout, self.env.state.agent_position, self.env.last_pickup)
            self.replay.add(Transition(obs, a, r, obs_next, done, self.episode, step, extras))
            obs = obs_next
            total += r
            step += 1
            self.global_step += 1
            if len(self.replay) >= c.warm_start:
                if self.agent.slot_trainer is not None:
                    if c.slot_schedule == "pretrain":
                        while not self.agent.slot_trainer.finished:
                            loss = self._slot_step()
                            if loss is not None:
                                recon_losses.append(loss)
                    else:
                        loss = self._slot_step()
                        if loss is not None:
                            recon_losses.append(loss)
                batch = self.replay.sample_batch(c.batch_size, self.replay_rng)
                try:
                    out = self.learner.inner_update(batch)
                except TrainingAborted as exc:
                    exc.dump_path = self._dump_abort(exc, batch)
                    raise
                if out is not None:
                    gvf_losses.append(out["gvf_loss"])
                    ddqn_losses.append(out["ddqn_loss"])
            if recon_losses and not math.isfinite(recon_losses[-1]):
                exc = TrainingAborted("non-finite reconstruction loss")
                exc.dump_path = self._dump_abort(exc, None)
                raise exc
        if self.learner.meta_learned:
            segment = self.replay.sample_unroll(c.unroll_steps, self.replay_rng) if self.learner.trace else None
            try:
                self.learner.meta_update(segment)
            except TrainingAborted as exc:
                exc.dump_path = self._dump_abort(exc, segment)
                raise
        self.episode += 1
        row = dict.fromkeys(LOG_FIELDS)
        row.update(
            episode=self.episode, global_step=self.global_step, train_return=total,
            gvf_loss=_mean_or_none(gvf_losses), ddqn_loss=_mean_or_none(ddqn_losses),
            recon_loss=_mean_or_none(recon_losses), epsilon=eps,
            wall_time=None if c.determinism else round(time.time() - self.start_wall, 3),
        )
        if self.episode % c.evaluate_every == 0:
            row["eval_return_mean"], row["eval_return_se"] = self.evaluate()
        return row

    def run(self, until_episode: Optional[int] = None) -> list[dict]:
        c = self.config
        stop = c.train_episodes if until_episode is None else min(until_episode, c.train_episodes)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._write_manifest(status="running")
        log_path = self.out_dir / "log.jsonl"
        try:
            with log_path.open("a") as fh:
                while self.episode < stop:
                    row = self.run_episode()
                    self.rows.append(row)
                    fh.write(json.dumps(row) + "\n")
                    fh.flush()
                    if c.checkpoint_every and self.episode % c.checkpoint_every == 0:
                        self.save_checkpoint(self.out_dir / "checkpoints" / f"episode_{self.episode:06d}.pt")
        except TrainingAborted:
            self._write_manifest(status="aborted")
            raise
        self.save_checkpoint(self.out_dir / "checkpoints" / "latest.pt")
        self._write_manifest(status="finished" if self.episode >= c.train_episodes else "paused")
        return self.rows

    # ------------------------------------------------------------------ persistence
    def _write_manifest(self, status: str) -> None:
        path = self.out_dir / "manifest.json"
        manifest = json.loads(path.read_text()) if path.exists() else {}
        now = datetime.now(timezone.utc).isoformat()
        manifest.setdefault("start_time", now)
        manifest.update(
            config_hash=self.config.hash(), code_version=ocgvf.__version__, variant=self.variant.id,
            env=self.config.env, seed=self.seed, status=status, episodes=self.episode,
        )
        if status != "running":
            manifest["end_time"] = now
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        self.config.save(self.out_dir / "config.txt")

    def save_checkpoint(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        env_state = self.env.get_state() if hasattr(self.env, "get_state") else None
        eval_state = self.eval_env.get_state() if hasattr(self.eval_env, "get_state") else None
        blob = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_text(),
            "seed": self.seed,
            "variant": self.variant.id,
            "num_actions": self.num_actions,
            "episode": self.episode,
            "global_step": self.global_step,
            "learner": self.learner.state_dict(),
            "slot_trainer": None if self.agent.slot_trainer is None else self.agent.slot_trainer.state_dict(),
            "replay": self.replay.state_dict(),
            "env": env_state,
            "eval_env": eval_state,
            "rng": {
                "act": self.act_rng.bit_generator.state,
                "replay": self.replay_rng.bit_generator.state,
                "task": self.task_rng.bit_generator.state,
                "torch": torch.get_rng_state(),
            },
        }
        tmp = path.with_suffix(".tmp")
        torch.save(blob, tmp)
        tmp.replace(path)
        return path

    @classmethod
    def from_checkpoint(cls, path, out_dir=None, env_factory: Optional[Callable] = None) -> "Trainer":
        blob = load_checkpoint(path)
        config = ExperimentConfig.from_text(blob["config"], str(path))
        out_dir = Path(out_dir) if out_dir is not None else Path(path).parent.parent
        trainer = cls(config, blob["seed"], out_dir, env_factory)
        trainer.learner.load_state_dict(blob["learner"])
        if blob["slot_trainer"] is not None:
            trainer.agent.slot_trainer.load_state_dict(blob["slot_trainer"])
        trainer.replay = ReplayBuffer.from_state_dict(blob["replay"])
        if blob["env"] is not None:
            trainer.env.set_state(blob["env"])
        if blob["eval_env"] is not None:
            trainer.eval_env.set_state(blob["eval_env"])
        trainer.act_rng.bit_generator.state = blob["rng"]["act"]
        trainer.replay_rng.bit_generator.state = blob["rng"]["replay"]
        trainer.task_rng.bit_generator.state = blob["rng"]["task"]
        torch.set_rng_state(blob["rng"]["torch"])
        trainer.episode = blob["episode"]
        trainer.global_step = blob["global_step"]
        log_path = trainer.out_dir / "log.jsonl"
        if log_path.exists():
            rows = [json.loads(l) for l in log_path.read_text().splitlines() if l.strip()]
            rows = [r for r in rows if r["episode"] <= trainer.episode]
            log_path.write_text("".join(json.dumps(r) + "\n" for r in rows))
            trainer.rows = rows
        return trainer


def load_checkpoint(path) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an ocgvf checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    return blob


def restore_agent(path) -> tuple[ExperimentConfig, Agent, dict]:
    """Rebuild the agent stored in a checkpoint (for visualisation)."""
    blob = load_checkpoint(path)
    config = ExperimentConfig.from_text(blob["config"], str(path))
    agent = make_agent(blob["variant"], config, blob["num_actions"], seed=blob["seed"])
    agent.learner.load_state_dict(blob["learner"])
    if blob["slot_trainer"] is not None:
        agent.slot_trainer.load_state_dict(blob["slot_trainer"])
    return config, agent, blob


def run_training(config: ExperimentConfig, seed: int, out_dir, until_episode: Optional[int] = None,
                 env_factory: Optional[Callable] = None) -> list[dict]:
    return Trainer(config, seed, out_dir, env_factory).run(until_episode)
