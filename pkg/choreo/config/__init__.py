"""Run configuration."""

from choreo.config.config import (
    BenchConfig,
    CodebookConfig,
    EnvConfig,
    ExplorationConfig,
    MetaConfig,
    ModelConfig,
    RunConfig,
    RunSection,
    SkillConfig,
)

__all__ = [
    "BenchConfig",
    "CodebookConfig",
    "EnvConfig",
    "ExplorationConfig",
    "MetaConfig",
    "ModelConfig",
    "RunConfig",
    "RunSection",
    "SkillConfig",
]
