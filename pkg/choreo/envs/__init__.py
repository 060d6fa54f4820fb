"""Toy environment, replay buffer and offline datasets."""

from choreo.envs.point_mass import PointMassEnv, env_step
from choreo.envs.replay import Batch, Episode, ReplayBuffer, sample_batch
from choreo.envs.dataset import (
    DATASET_FORMAT,
    DATASET_VERSION,
    collect_random_dataset,
    load_offline_dataset,
    save_offline_dataset,
)

__all__ = [
    "PointMassEnv",
    "env_step",
    "Batch",
    "Episode",
    "ReplayBuffer",
    "sample_batch",
    "DATASET_FORMAT",
    "DATASET_VERSION",
    "collect_random_dataset",
    "load_offline_dataset",
    "save_offline_dataset",
]
