"""FIFO transition storage with i.i.d. minibatches and contiguous unrolled segments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    episode_id: int
    step_index: int
    extras: Optional[np.ndarray] = None


@dataclass
class Batch:
    """Column-major view of a set of transitions (observations as float32 in [0, 1])."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    episode_id: np.ndarray
    step_index: np.ndarray
    extras: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.a)


def _to_u8(obs: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(obs) * 255.0), 0, 255).astype(np.uint8)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_shape: tuple[int, ...], extras_dim: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_shape = tuple(obs_shape)
        self.extras_dim = int(extras_dim)
        self._s = np.zeros((capacity, *obs_shape), dtype=np.uint8)
        self._s_next = np.zeros((capacity, *obs_shape), dtype=np.uint8)
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity, dtype=np.float32)
        self._done = np.zeros(capacity, dtype=bool)
        self._ep = np.zeros(capacity, dtype=np.int64)
        self._step = np.zeros(capacity, dtype=np.int64)
        self._extras = np.zeros((capacity, extras_dim), dtype=np.float32) if extras_dim else None
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        i = self._next
        self._s[i] = _to_u8(t.s)
        self._s_next[i] = _to_u8(t.s_next)
        self._a[i] = t.a
        self._r[i] = t.r
        self._done[i] = t.done
        self._ep[i] = t.episode_id
        self._step[i] = t.step_index
        if self._extras is not None:
            self._extras[i] = 0.0 if t.extras is None else t.extras
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(
            s=self._s[idx].astype(np.float32) / 255.0,
            a=self._a[idx].copy(),
            r=self._r[idx].copy(),
            s_next=self._s_next[idx].astype(np.float32) / 255.0,
            done=self._done[idx].copy(),
            episode_id=self._ep[idx].copy(),
            step_index=self._step[idx].copy(),
            extras=None if self._extras is None else self._extras[idx].copy(),
        )

    def _logical(self) -> np.ndarray:
        """Physical slot indices ordered oldest to newest."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def sample_batch(self, n: int, rng: np.random.Generator) -> Optional[Batch]:
        """Uniform sample with replacement, or ``None`` when fewer than ``n`` transitions are stored."""
        if self._size < n or n < 1:
            return None
        idx = rng.integers(0, self._size, size=n)
        return self._gather(self._logical()[idx])

    def valid_unroll_starts(self, d: int) -> np.ndarray:
        """Logical positions that begin ``d`` consecutive same-episode transitions."""
        if d < 1 or self._size < d:
            return np.zeros(0, dtype=np.int64)
        order = self._logical()
        ep, st = self._ep[order], self._step[order]
        linked = (ep[1:] == ep[:-1]) & (st[1:] == st[:-1] + 1)
        if d == 1:
            return np.arange(self._size)
        breaks = np.concatenate([[0], np.cumsum(~linked)])
        # window [i, i + d - 1] has no break between consecutive entries
        starts = np.arange(self._size - d + 1)
        ok = breaks[starts + d - 1] - breaks[starts] == 0
        return starts[ok]

    def sample_unroll(self, d: int, rng: np.random.Generator) -> Optional[Batch]:
        """Length-``d`` segment from a single episode, uniform over valid starts; ``None`` if none exists."""
        starts = self.valid_unroll_starts(d)
        if len(starts) == 0:
            return None
        start = starts[rng.integers(len(starts))]
        return self._gather(self._logical()[start : start + d])

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "obs_shape": self.obs_shape,
            "extras_dim": self.extras_dim,
            "s": self._s[: self._size].copy() if self._size < self.capacity else self._s.copy(),
            "s_next": self._s_next[: self._size].copy() if self._size < self.capacity else self._s_next.copy(),
            "a": self._a.copy(),
            "r": self._r.copy(),
            "done": self._done.copy(),
            "ep": self._ep.copy(),
            "step": self._step.copy(),
            "extras": None if self._extras is None else self._extras.copy(),
            "next": self._next,
            "size": self._size,
        }

    @classmethod
    def from_state_dict(cls, sd: dict) -> "ReplayBuffer":
        buf = cls(sd["capacity"], sd["obs_shape"], sd["extras_dim"])
        n = len(sd["s"])
        buf._s[:n] = sd["s"]
        buf._s_next[:n] = sd["s_next"]
        buf._a[:] = sd["a"]
        buf._r[:] = sd["r"]
        buf._done[:] = sd["done"]
        buf._ep[:] = sd["ep"]
        buf._step[:] = sd["step"]
        if buf._extras is not None:
            buf._extras[:] = sd["extras"]
        buf._next = sd["next"]
        buf._size = sd["size"]
        return buf
