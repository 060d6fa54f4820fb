"""
Episodic replay buffer.

Episodes are stored whole.  Step t of an episode holds the observation
``obs[t]``, the action ``act[t]`` that produced it (zeros at t = 0) and the
reward ``rew[t]`` received on arriving at it.  Sampled windows are T
contiguous steps of a single episode; every valid window in the buffer is
equally likely.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Iterator, Optional

import numpy as np
import torch

from choreo.errors import ContractViolation, NotReadyError
from choreo.substrate.core import DTYPE

logger = logging.getLogger(__name__)


@dataclass
class Episode:
    obs:  np.ndarray               # (L, obs_dim)
    act:  np.ndarray               # (L, act_dim)
    rew:  np.ndarray               # (L,)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.obs.shape[0]


@dataclass
class Batch:
    obs: torch.Tensor   # (B, T, obs_dim)
    act: torch.Tensor   # (B, T, act_dim)
    rew: torch.Tensor   # (B, T)


class ReplayBuffer:
    """
    FIFO store of whole episodes bounded by a step capacity.

    Args:
        obs_dim:  Observation size; inferred from the first episode when None.
        act_dim:  Action size; inferred from the first episode when None.
        capacity: Maximum number of stored steps.  The oldest episodes are
                  evicted first; the newest episode is always kept.
    """

    def __init__(self, obs_dim: Optional[int] = None, act_dim: Optional[int] = None,
                 capacity: int = 1_000_000):
        if capacity < 1:
            raise ContractViolation(f"capacity must be >= 1, got {capacity}")
        self.obs_dim  = obs_dim
        self.act_dim  = act_dim
        self.capacity = capacity
        self.episodes: Deque[Episode] = deque()
        self.total_steps = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def add_episode(self, obs, act, rew=None, meta: Optional[dict] = None) -> Episode:
        obs = np.asarray(obs, dtype=np.float64)
        act = np.asarray(act, dtype=np.float64)
        if obs.ndim != 2 or act.ndim != 2 or obs.shape[0] != act.shape[0]:
            raise ContractViolation(
                f"episode needs (L, obs_dim) and (L, act_dim) arrays, got {obs.shape} and {act.shape}"
            )
        rew = np.zeros(obs.shape[0]) if rew is None else np.asarray(rew, dtype=np.float64).reshape(-1)
        if rew.shape[0] != obs.shape[0]:
            raise ContractViolation(f"reward length {rew.shape[0]} != episode length {obs.shape[0]}")
        if self.obs_dim is None:
            self.obs_dim = obs.shape[1]
        if self.act_dim is None:
            self.act_dim = act.shape[1]
        if obs.shape[1] != self.obs_dim or act.shape[1] != self.act_dim:
            raise ContractViolation(
                f"episode sizes ({obs.shape[1]}, {act.shape[1]}) != buffer ({self.obs_dim}, {self.act_dim})"
            )

        episode = Episode(obs, act, rew, dict(meta or {}))
        self.episodes.append(episode)
        self.total_steps += len(episode)
        while self.total_steps > self.capacity and len(self.episodes) > 1:
            evicted = self.episodes.popleft()
            self.total_steps -= len(evicted)
            logger.debug(f"replay: evicted episode of {len(evicted)} steps")
        return episode

    def clear(self) -> None:
        self.episodes.clear()
        self.total_steps = 0

    def window_counts(self, length: int) -> np.ndarray:
        return np.array([max(len(ep) - length + 1, 0) for ep in self.episodes], dtype=np.int64)

    def sample_batch(self, batch_size: int, length: int, rng: torch.Generator) -> Batch:
        """
        ``batch_size`` independent windows of ``length`` steps.

        Raises:
            NotReadyError: no episode is at least ``length`` steps long.
        """
        if batch_size < 1 or length < 1:
            raise ContractViolation(f"batch size and length must be >= 1, got {batch_size}, {length}")
        counts = self.window_counts(length)
        total = int(counts.sum())
        if total == 0:
            raise NotReadyError(
                f"replay holds no episode of length >= {length} "
                f"({len(self.episodes)} episodes, {self.total_steps} steps)"
            )
        cumulative = np.cumsum(counts)
        draws = torch.randint(total, (batch_size,), generator=rng).numpy()
        episodes = list(self.episodes)
        obs, act, rew = [], [], []
        for draw in draws:
            e = int(np.searchsorted(cumulative, draw, side='right'))
            start = int(draw - (cumulative[e] - counts[e]))
            ep = episodes[e]
            obs.append(ep.obs[start:start + length])
            act.append(ep.act[start:start + length])
            rew.append(ep.rew[start:start + length])
        return Batch(
            torch.as_tensor(np.stack(obs), dtype=DTYPE),
            torch.as_tensor(np.stack(act), dtype=DTYPE),
            torch.as_tensor(np.stack(rew), dtype=DTYPE),
        )


def sample_batch(buffer: ReplayBuffer, batch_size: int, length: int, rng: torch.Generator) -> Batch:
    return buffer.sample_batch(batch_size, length, rng)
