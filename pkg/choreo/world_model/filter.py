"""Posterior filtering of a live episode, one environment step at a time."""

from typing import Optional

import numpy as np
import torch

from choreo.substrate.core import DTYPE
from choreo.world_model.rssm import ModelState, WorldModel


class LatentFilter:
    """
    Tracks the posterior model state of a single running episode.

    The first observation of an episode is filtered with a zero action,
    matching the replay convention that ``act[0]`` is all zeros.
    """

    def __init__(self, wm: WorldModel):
        self.wm = wm
        self.state: Optional[ModelState] = None

    def reset(self, obs: np.ndarray, rng: torch.Generator) -> ModelState:
        self.state = self.wm.initial_state(1)
        return self.step(np.zeros(self.wm.act_dim), obs, rng)

    def step(self, action: np.ndarray, obs: np.ndarray, rng: torch.Generator) -> ModelState:
        """Advance with the action that produced ``obs``."""
        a = torch.as_tensor(np.asarray(action), dtype=DTYPE).reshape(1, -1)
        x = torch.as_tensor(np.asarray(obs), dtype=DTYPE).reshape(1, -1)
        with torch.no_grad():
            self.state = self.wm.posterior_step(self.state, a, x, rng)
        return self.state
