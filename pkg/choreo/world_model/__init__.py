"""Latent dynamics model and imagination rollouts."""

from choreo.world_model.filter import LatentFilter
from choreo.world_model.rssm import (
    ImaginedTrajectory,
    ModelState,
    WorldModel,
    kl_categorical,
)

__all__ = [
    "LatentFilter",
    "ImaginedTrajectory",
    "ModelState",
    "WorldModel",
    "kl_categorical",
]
