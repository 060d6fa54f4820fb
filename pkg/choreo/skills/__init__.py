"""Skill discovery (VQ codebook), skill rewards and skill actor-critics."""

from choreo.skills.codebook import (
    Codebook,
    SkillVQ,
    VQOutput,
    active_fraction,
    assignment_histogram,
    ema_update,
    export_codebook_json,
    load_codebook_json,
    quantize,
    resample_codes,
    resample_weights,
    sample_skill_uniform,
)
from choreo.skills.rewards import code_reward, knn_entropy_reward, skill_reward
from choreo.skills.actor_critic import (
    SkillPolicySet,
    TruncatedNormal,
    critic_loss,
    lambda_returns,
    skill_objective,
    train_skills,
)

__all__ = [
    "Codebook",
    "SkillVQ",
    "VQOutput",
    "active_fraction",
    "assignment_histogram",
    "ema_update",
    "export_codebook_json",
    "load_codebook_json",
    "quantize",
    "resample_codes",
    "resample_weights",
    "sample_skill_uniform",
    "code_reward",
    "knn_entropy_reward",
    "skill_reward",
    "SkillPolicySet",
    "TruncatedNormal",
    "critic_loss",
    "lambda_returns",
    "skill_objective",
    "train_skills",
]
