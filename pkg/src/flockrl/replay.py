"""Shared experience replay: one ring buffer filled by every vehicle,
sampled uniformly with replacement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    """One stored experience: stacked observation channels, the executed
    action, the inclusive reward, and the next observation."""

    observation: np.ndarray        # (channels, l, l)
    action: np.ndarray             # (2,)
    reward: float
    next_observation: np.ndarray   # (channels, l, l)


@dataclass(frozen=True)
class Minibatch:
    observations: np.ndarray        # (S, channels, l, l)
    actions: np.ndarray             # (S, 2)
    rewards: np.ndarray             # (S,)
    next_observations: np.ndarray   # (S, channels, l, l)

    def __len__(self) -> int:
        return self.rewards.shape[0]


class InsufficientSamplesError(RuntimeError):
    """Raised when a sample is requested before the warm-up fill."""


class ReplayBuffer:
    """Fixed-capacity FIFO ring over preallocated arrays. Once full, the
    oldest transition is overwritten on each push."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._obs: np.ndarray | None = None
        self._act: np.ndarray | None = None
        self._rew: np.ndarray | None = None
        self._next: np.ndarray | None = None
        self._count = 0   # total pushes ever

    @property
    def size(self) -> int:
        return min(self._count, self.capacity)

    @property
    def insertions(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self.size

    def _allocate(self, obs_shape, act_shape) -> None:
        self._obs = np.empty((self.capacity, *obs_shape))
        self._act = np.empty((self.capacity, *act_shape))
        self._rew = np.empty(self.capacity)
        self._next = np.empty((self.capacity, *obs_shape))

    def push(self, t: Transition) -> None:
        obs = np.asarray(t.observation, dtype=float)
        act = np.asarray(t.action, dtype=float)
        nxt = np.asarray(t.next_observation, dtype=float)
        if not (np.isfinite(obs).all() and np.isfinite(act).all()
                and np.isfinite(t.reward) and np.isfinite(nxt).all()):
            raise ValueError("non-finite transition pushed to replay buffer")
        if self._obs is None:
            self._allocate(obs.shape, act.shape)
        slot = self._count % self.capacity
        self._obs[slot] = obs
        self._act[slot] = act
        self._rew[slot] = t.reward
        self._next[slot] = nxt
        self._count += 1

    def sample(self, s: int, rng: np.random.Generator) -> Minibatch:
        """s uniform draws with replacement from the current contents.

        Draws are with replacement, so s may exceed the current size; an
        empty buffer signals that the trainer must keep warming up."""
        if self.size == 0:
            raise InsufficientSamplesError(
                "buffer is empty; trainer must wait for warm-up")
        idx = rng.integers(0, self.size, size=s)
        return Minibatch(
            observations=self._obs[idx].copy(),
            actions=self._act[idx].copy(),
            rewards=self._rew[idx].copy(),
            next_observations=self._next[idx].copy(),
        )

    def transitions(self) -> list[Transition]:
        """Current contents in insertion order (oldest first); intended for
        tests and debugging, not the hot path."""
        out = []
        start = self._count - self.size
        for k in range(start, self._count):
            slot = k % self.capacity
            out.append(Transition(
                observation=self._obs[slot].copy(),
                action=self._act[slot].copy(),
                reward=float(self._rew[slot]),
                next_observation=self._next[slot].copy(),
            ))
        return out
