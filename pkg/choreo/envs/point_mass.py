"""
2-D point mass in the square arena [-1, 1]^2.

    velocity <- 0.8 * velocity + action * dt
    position <- clip(position + velocity, -1, 1)

Observations are ``(x, y, vx, vy)``.  The sparse reward is 1 inside
``goal_radius`` of the goal and 0 elsewhere; the dense variant decays
linearly with distance across the arena diagonal.  The ``two_room`` layout
adds a wall along x = 0 with a door at |y| < DOOR_HALF_WIDTH.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
import torch

from choreo.config.config import EnvConfig
from choreo.errors import ContractViolation

logger = logging.getLogger(__name__)

DAMPING = 0.8
DOOR_HALF_WIDTH = 0.2
ARENA_DIAGONAL = 2.0 * math.sqrt(2.0)
_WALL_EPS = 1e-6


class PointMassEnv:
    """
    Damped point mass with a goal region.

    Args:
        cfg: Environment section of the run configuration.
    """

    obs_dim = 4
    action_dim = 2

    def __init__(self, cfg: Optional[EnvConfig] = None):
        self.cfg         = cfg or EnvConfig()
        self.dt          = self.cfg.dt
        self.goal        = np.asarray(self.cfg.goal, dtype=np.float64)
        self.goal_radius = self.cfg.goal_radius
        self.sparse      = self.cfg.sparse
        self.max_steps   = self.cfg.max_steps
        self.layout      = self.cfg.layout
        self.start       = np.asarray(self.cfg.start, dtype=np.float64)
        if self.layout not in ('open', 'two_room'):
            raise ContractViolation(f"unknown layout '{self.layout}'")

        self.position = self.start.copy()
        self.velocity = np.zeros(2)
        self.steps    = 0
        self.done     = True
        self.success  = False
        self.clipped_actions = 0

    # ------------------------------------------------------------------

    def reset(self, rng: Optional[torch.Generator] = None, jitter: float = 0.0) -> np.ndarray:
        """Start a new episode at ``start`` (plus uniform jitter when ``rng`` is given)."""
        self.position = self.start.copy()
        if rng is not None and jitter > 0:
            noise = (torch.rand(2, generator=rng, dtype=torch.float64) * 2.0 - 1.0) * jitter
            self.position = np.clip(self.position + noise.numpy(), -1.0, 1.0)
        self.velocity = np.zeros(2)
        self.steps    = 0
        self.done     = False
        self.success  = False
        return self.observation()

    def set_state(self, position, velocity) -> np.ndarray:
        self.position = np.asarray(position, dtype=np.float64).copy()
        self.velocity = np.asarray(velocity, dtype=np.float64).copy()
        self.done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    def goal_distance(self) -> float:
        return float(np.linalg.norm(self.position - self.goal))

    def reward(self) -> float:
        dist = self.goal_distance()
        if self.sparse:
            return 1.0 if dist <= self.goal_radius else 0.0
        return max(0.0, 1.0 - dist / ARENA_DIAGONAL)

    def step(self, action) -> Tuple[np.ndarray, float, bool]:
        if self.done:
            raise ContractViolation("step() called on a finished episode; call reset() first")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.action_dim,):
            raise ContractViolation(f"action must have {self.action_dim} entries, got {action.shape}")
        clipped = np.clip(action, -1.0, 1.0)
        if not np.array_equal(clipped, action):
            self.clipped_actions += 1
            if self.clipped_actions == 1:
                logger.warning(f"point mass: action {action.tolist()} outside [-1, 1] clipped")
            else:
                logger.debug(f"point mass: clipped action #{self.clipped_actions}")

        self.velocity = DAMPING * self.velocity + clipped * self.dt
        new_position = np.clip(self.position + self.velocity, -1.0, 1.0)
        if self.layout == 'two_room':
            new_position = self._apply_wall(self.position, new_position)
        self.position = new_position

        self.steps += 1
        reward = self.reward()
        if self.goal_distance() <= self.goal_radius:
            self.success = True
        self.done = self.steps >= self.max_steps
        return self.observation(), reward, self.done

    def _apply_wall(self, old: np.ndarray, new: np.ndarray) -> np.ndarray:
        """Stop at x = 0 unless the segment crosses it through the door."""
        old_left, new_left = old[0] < 0.0, new[0] < 0.0
        if old_left == new_left:
            return new
        frac = (0.0 - old[0]) / (new[0] - old[0])
        y_cross = old[1] + frac * (new[1] - old[1])
        if abs(y_cross) < DOOR_HALF_WIDTH:
            return new
        blocked = new.copy()
        blocked[0] = -_WALL_EPS if old_left else 0.0
        self.velocity[0] = 0.0
        return blocked

    def discretize(self, cells: int = 10) -> Tuple[int, int]:
        """Grid cell of the current position, for state-coverage counts."""
        idx = np.floor((self.position + 1.0) / 2.0 * cells).astype(int)
        idx = np.clip(idx, 0, cells - 1)
        return int(idx[0]), int(idx[1])


def env_step(env: PointMassEnv, action) -> Tuple[np.ndarray, float, bool]:
    return env.step(action)
