"""Ring replay buffer with per-goal bookkeeping.

Transitions are stored columnwise (poses, goals, actions, rewards) so
sampling a training batch is a fancy-index away; scaled errors and network
features are derived at batch time from the raw poses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from .core import RLConfig, Transition, state_features_batch


@dataclass
class TransitionBatch:
    """Columnar batch of raw transitions."""

    pose: np.ndarray        # (B, 6)
    goal: np.ndarray        # (B, 6)
    action_hz: np.ndarray   # (B, 9)
    next_pose: np.ndarray   # (B, 6)
    reward: np.ndarray      # (B,)
    done: np.ndarray        # (B,) float 0/1
    step_idx: np.ndarray    # (B,)
    goal_id: np.ndarray     # (B,) int

    @property
    def size(self) -> int:
        return self.pose.shape[0]

    def features(self, cfg: RLConfig):
        """(state_features, next_state_features) for the nets."""
        return (state_features_batch(self.pose, self.goal, cfg),
                state_features_batch(self.next_pose, self.goal, cfg))

    @staticmethod
    def from_transitions(transitions, dones=None, goal_ids=None) -> "TransitionBatch":
        if not transitions:
            raise DomainError("empty transition list")
        n = len(transitions)
        dones = np.zeros(n) if dones is None else np.asarray(dones, dtype=float)
        goal_ids = np.zeros(n, dtype=int) if goal_ids is None \
            else np.asarray(goal_ids, dtype=int)
        return TransitionBatch(
            pose=np.stack([t.s.p_s2r.as_array() for t in transitions]),
            goal=np.stack([t.g.as_array() for t in transitions]),
            action_hz=np.stack([np.asarray(t.a, dtype=float) for t in transitions]),
            next_pose=np.stack([t.s_next.p_s2r.as_array() for t in transitions]),
            reward=np.array([t.r for t in transitions], dtype=float),
            done=dones,
            step_idx=np.array([t.step_count for t in transitions], dtype=float),
            goal_id=goal_ids,
        )


class ReplayBuffer:
    """Fixed-capacity ring buffer over columnar transition storage."""

    def __init__(self, capacity: int = 200_000):
        if capacity <= 0:
            raise DomainError("capacity must be positive")
        self.capacity = capacity
        self._pose = np.zeros((capacity, 6))
        self._goal = np.zeros((capacity, 6))
        self._action = np.zeros((capacity, 9))
        self._next_pose = np.zeros((capacity, 6))
        self._reward = np.zeros(capacity)
        self._done = np.zeros(capacity)
        self._step = np.zeros(capacity)
        self._goal_id = np.zeros(capacity, dtype=int)
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition, done: bool = False, goal_id: int = 0) -> None:
        i = self._head
        self._pose[i] = t.s.p_s2r.as_array()
        self._goal[i] = t.g.as_array()
        self._action[i] = np.asarray(t.a, dtype=float)
        self._next_pose[i] = t.s_next.p_s2r.as_array()
        self._reward[i] = t.r
        self._done[i] = float(done)
        self._step[i] = t.step_count
        self._goal_id[i] = goal_id
        self._head = (self._head + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _select(self, idx) -> TransitionBatch:
        return TransitionBatch(
            pose=self._pose[idx].copy(),
            goal=self._goal[idx].copy(),
            action_hz=self._action[idx].copy(),
            next_pose=self._next_pose[idx].copy(),
            reward=self._reward[idx].copy(),
            done=self._done[idx].copy(),
            step_idx=self._step[idx].copy(),
            goal_id=self._goal_id[idx].copy(),
        )

    def sample(self, batch: int, rng: np.random.Generator) -> TransitionBatch:
        if self._size == 0:
            raise DomainError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=batch)
        return self._select(idx)

    def all(self) -> TransitionBatch:
        return self._select(np.arange(self._size))

    def clear(self) -> None:
        self._size = 0
        self._head = 0

    def _compact(self, keep_idx: np.ndarray) -> None:
        keep_idx = np.sort(keep_idx)
        n = keep_idx.size
        for arr in (self._pose, self._goal, self._action, self._next_pose):
            arr[:n] = arr[keep_idx]
        for arr in (self._reward, self._done, self._step, self._goal_id):
            arr[:n] = arr[keep_idx]
        self._size = n
        self._head = n % self.capacity

    def retain_fraction(self, fraction: float, rng: np.random.Generator) -> None:
        """Keep a uniform random fraction of the stored transitions."""
        if not 0.0 <= fraction <= 1.0:
            raise DomainError("fraction must lie in [0, 1]")
        keep = int(round(self._size * fraction))
        idx = rng.choice(self._size, size=keep, replace=False)
        self._compact(idx)

    def goal_counts(self) -> dict:
        ids, counts = np.unique(self._goal_id[:self._size], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def rebalance_to_quotas(self, quotas: dict, rng: np.random.Generator) -> None:
        """Subsample so per-goal shares match the given fractional quotas.

        Keeps the largest buffer consistent with the quota proportions;
        goals without a quota entry are dropped.
        """
        total_quota = sum(quotas.values())
        if total_quota <= 0:
            raise DomainError("quotas must sum to a positive value")
        counts = self.goal_counts()
        scale = min(counts.get(g, 0) / (q / total_quota)
                    for g, q in quotas.items() if q > 0)
        keep_parts = []
        ids = self._goal_id[:self._size]
        for g, q in quotas.items():
            want = int(np.floor(scale * q / total_quota))
            mine = np.flatnonzero(ids == g)
            if want < mine.size:
                mine = rng.choice(mine, size=want, replace=False)
            keep_parts.append(mine)
        self._compact(np.concatenate(keep_parts))
