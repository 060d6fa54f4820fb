"""Fine-tuning: reward smoothing, meta-controller and evaluations."""

from choreo.adaptation.meta import (
    MetaController,
    RewardSmoother,
    score_function_loss,
    select_skill,
    smooth,
    train_meta,
)
from choreo.adaptation.evaluation import (
    random_policy_eval,
    run_agent_episode,
    skill_sweep_eval,
    zero_shot_eval,
)

__all__ = [
    "MetaController",
    "RewardSmoother",
    "score_function_loss",
    "select_skill",
    "smooth",
    "train_meta",
    "random_policy_eval",
    "run_agent_episode",
    "skill_sweep_eval",
    "zero_shot_eval",
]
