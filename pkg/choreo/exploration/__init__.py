"""Information-gain exploration policy for online data collection."""

from choreo.exploration.explorer import (
    REWARD_MODES,
    ExplorationPolicy,
    imagined_information_gain,
    lbs_reward,
    train_exploration,
)

__all__ = [
    "REWARD_MODES",
    "ExplorationPolicy",
    "imagined_information_gain",
    "lbs_reward",
    "train_exploration",
]
