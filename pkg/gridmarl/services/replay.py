"""
Joint-transition storage for off-policy multi-agent learning.
"""
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from gridmarl.core.errors import ContractViolation
from gridmarl.utils.seeding import make_rng


@dataclass
class Transition:
    """One joint step (or a batch of them when arrays carry a leading batch axis)."""

    obs: dict[str, np.ndarray]
    actions: dict[str, np.ndarray]
    rewards: dict[str, np.ndarray]
    next_obs: dict[str, np.ndarray]
    done: np.ndarray

    def __len__(self) -> int:
        return int(np.asarray(self.done).reshape(-1).size)


class ReplayBuffer:
    """
    Ring buffer of joint transitions with a seeded sampler.

    Args:
        capacity: Maximum stored transitions; the oldest are evicted first
        obs_dims: Agent id to observation length
        act_dims: Agent id to action length
        seed: Sampler seed
    """

    def __init__(self, capacity: int, obs_dims: Mapping[str, int], act_dims: Mapping[str, int], seed: int = 0):
        if capacity < 1:
            raise ContractViolation("replay capacity must be >= 1")
        if set(obs_dims) != set(act_dims):
            raise ContractViolation("observation and action dims must cover the same agents")
        self.capacity = capacity
        self.agent_ids = tuple(sorted(obs_dims))
        self._obs = {a: np.zeros((capacity, obs_dims[a])) for a in self.agent_ids}
        self._next_obs = {a: np.zeros((capacity, obs_dims[a])) for a in self.agent_ids}
        self._actions = {a: np.zeros((capacity, act_dims[a])) for a in self.agent_ids}
        self._rewards = {a: np.zeros(capacity) for a in self.agent_ids}
        self._done = np.zeros(capacity)
        self._cursor = 0
        self._size = 0
        self.inserted = 0
        self.rng = make_rng(seed)

    def __len__(self) -> int:
        return self._size

    def add(self, transition: Transition) -> None:
        if set(transition.obs) != set(self.agent_ids) or set(transition.actions) != set(self.agent_ids):
            raise ContractViolation("transition agent keys do not match the buffer")
        k = self._cursor
        for a in self.agent_ids:
            self._obs[a][k] = transition.obs[a]
            self._next_obs[a][k] = transition.next_obs[a]
            self._actions[a][k] = transition.actions[a]
            self._rewards[a][k] = float(transition.rewards[a])
        self._done[k] = float(transition.done)
        self._cursor = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.inserted += 1

    def _gather(self, index: np.ndarray) -> Transition:
        return Transition(
            obs={a: self._obs[a][index] for a in self.agent_ids},
            actions={a: self._actions[a][index] for a in self.agent_ids},
            rewards={a: self._rewards[a][index] for a in self.agent_ids},
            next_obs={a: self._next_obs[a][index] for a in self.agent_ids},
            done=self._done[index],
        )

    def sample(self, batch_size: int) -> Transition:
        """Uniform sample with replacement."""
        if self._size == 0:
            raise ContractViolation("cannot sample from an empty replay buffer")
        return self._gather(self.rng.integers(0, self._size, size=batch_size))

    def contents(self) -> Transition:
        """Stored transitions, oldest first."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = (np.arange(self.capacity) + self._cursor) % self.capacity
        return self._gather(order)


def stack_agents(parts: Mapping[str, np.ndarray], order: Sequence[str]) -> np.ndarray:
    """Concatenate per-agent batches along the feature axis in ``order``."""
    return np.concatenate([np.atleast_2d(parts[a]) for a in order], axis=1)
