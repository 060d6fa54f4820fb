"""
choreo: skill discovery with a learned world model.

Stable public exports, import what you need::

    from choreo.config import RunConfig
    from choreo.world_model import WorldModel, ModelState
    from choreo.skills import SkillVQ, SkillPolicySet
    from choreo.adaptation import MetaController
    from choreo.envs import PointMassEnv, ReplayBuffer
    from choreo.harness import run_pretrain, run_finetune, run_codebook_bench
"""

__version__ = "0.1.0"

from choreo.errors import (
    CheckpointError,
    ChoreoError,
    ConfigError,
    ContractViolation,
    DatasetParseError,
    NotReadyError,
    NumericFault,
    RunLockedError,
)
from choreo.config import RunConfig

__all__ = [
    "ChoreoError",
    "ContractViolation",
    "NumericFault",
    "NotReadyError",
    "DatasetParseError",
    "ConfigError",
    "CheckpointError",
    "RunLockedError",
    "RunConfig",
]
