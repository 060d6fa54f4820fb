"""
Agent assembly and checkpoint directories.

A checkpoint directory holds::

  world_model.ckpt   reward_head.ckpt   codebook.ckpt   skills.ckpt
  exploration.ckpt   meta.ckpt          rng.state       progress.json
  replay.jsonl       config.json

``reward_head.ckpt`` and ``meta.ckpt`` only exist once fine-tuning has
started; ``exploration.ckpt`` only for online pretraining.
"""

import json
import logging
import os
from typing import Dict, Optional

import torch

from choreo.adaptation.meta import MetaController, train_meta
from choreo.config.config import RunConfig
from choreo.envs.replay import Batch
from choreo.errors import CheckpointError
from choreo.exploration.explorer import ExplorationPolicy, train_exploration
from choreo.skills.actor_critic import SkillPolicySet, train_skills
from choreo.skills.codebook import SkillVQ
from choreo.substrate.checkpoint import load_checkpoint, save_checkpoint
from choreo.world_model.rssm import WorldModel

logger = logging.getLogger(__name__)

WORLD_MODEL_FILE = 'world_model.ckpt'
REWARD_HEAD_FILE = 'reward_head.ckpt'
CODEBOOK_FILE    = 'codebook.ckpt'
SKILLS_FILE      = 'skills.ckpt'
EXPLORATION_FILE = 'exploration.ckpt'
META_FILE        = 'meta.ckpt'
RNG_FILE         = 'rng.state'
PROGRESS_FILE    = 'progress.json'
REPLAY_FILE      = 'replay.jsonl'
CONFIG_FILE      = 'config.json'


class ChoreoAgent:
    """
    World model, skill autoencoder, skill policies and the optional
    exploration policy and meta-controller of one run.

    Args:
        cfg:     Run configuration.
        obs_dim: Observation size.
        act_dim: Action size.
        rng:     Generator for initialisation; the same generator drives training.
        explore: Build the exploration policy (online pretraining).
    """

    def __init__(self, cfg: RunConfig, obs_dim: int, act_dim: int, rng: torch.Generator,
                 explore: bool = False):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.wm = WorldModel(obs_dim, act_dim, cfg.model, rng)
        self.vq = SkillVQ(cfg.model.deter, cfg.codebook, rng, grad_clip=cfg.model.grad_clip)
        self.skills = SkillPolicySet(cfg.model.deter, cfg.codebook.code_dim, act_dim, cfg.skill, rng)
        self.explorer: Optional[ExplorationPolicy] = None
        if explore:
            self.explorer = ExplorationPolicy(
                self.wm.feat_dim, act_dim, cfg.skill, rng, cfg.exploration.reward_mode
            )
        self.meta: Optional[MetaController] = None

    # ------------------------------------------------------------------
    # Phases
    # ------------------------------------------------------------------

    def start_finetune(self, rng: torch.Generator) -> None:
        """Create the reward head and the meta-controller."""
        self.wm.enable_reward_head(rng)
        if self.meta is None:
            self.meta = MetaController(self.wm.feat_dim, self.vq.N, self.cfg.meta, self.cfg.skill, rng)

    def pretrain_update(self, batch: Batch, rng: torch.Generator) -> Dict[str, float]:
        """World model, skill autoencoder, skill policies and exploration; rewards unused."""
        states, metrics, kl_steps = self.wm.train_step(batch.obs, batch.act, rng)
        metrics.update(self.vq.train_step(states.deter.reshape(-1, self.wm.deter_dim), rng))
        metrics.update(train_skills(self.wm, self.vq, self.skills, states, rng))
        if self.explorer is not None:
            metrics.update(train_exploration(self.wm, self.explorer, states, rng, info_gain=kl_steps))
        return metrics

    def finetune_update(self, batch: Batch, rng: torch.Generator, freeze_skills: bool = False) -> Dict[str, float]:
        """World model with reward head, then meta-controller and skill adaptation."""
        states, metrics, _ = self.wm.train_step(batch.obs, batch.act, rng, rewards=batch.rew)
        metrics.update(train_meta(self.wm, self.vq, self.skills, self.meta, states, rng, freeze_skills))
        return metrics

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------

    def save(self, directory: str, rng: Optional[torch.Generator] = None, fmt: str = 'binary') -> None:
        os.makedirs(directory, exist_ok=True)
        save_checkpoint(os.path.join(directory, WORLD_MODEL_FILE), self.wm.state_tensors(), fmt)
        save_checkpoint(os.path.join(directory, CODEBOOK_FILE), self.vq.state_tensors(), fmt)
        save_checkpoint(os.path.join(directory, SKILLS_FILE), self.skills.state_tensors(), fmt)
        if self.wm.has_reward_head:
            save_checkpoint(os.path.join(directory, REWARD_HEAD_FILE), self.wm.reward_state_tensors(), fmt)
        if self.explorer is not None:
            save_checkpoint(os.path.join(directory, EXPLORATION_FILE), self.explorer.state_tensors(), fmt)
        if self.meta is not None:
            save_checkpoint(os.path.join(directory, META_FILE), self.meta.state_tensors(), fmt)
        if rng is not None:
            save_rng(os.path.join(directory, RNG_FILE), rng)
        self.cfg.save(os.path.join(directory, CONFIG_FILE))
        logger.info(f"checkpoint saved to {directory}")

    def load(self, directory: str, rng: Optional[torch.Generator] = None) -> None:
        """
        Restore every component present in ``directory``.

        Raises:
            CheckpointError: a required file is missing or a shape disagrees
                             with the running configuration.
        """
        self.wm.load_state_tensors(load_checkpoint(os.path.join(directory, WORLD_MODEL_FILE)))
        self.vq.load_state_tensors(load_checkpoint(os.path.join(directory, CODEBOOK_FILE)))
        self.skills.load_state_tensors(load_checkpoint(os.path.join(directory, SKILLS_FILE)))

        expl_path = os.path.join(directory, EXPLORATION_FILE)
        if self.explorer is not None and os.path.exists(expl_path):
            self.explorer.load_state_tensors(load_checkpoint(expl_path))

        reward_path = os.path.join(directory, REWARD_HEAD_FILE)
        meta_path = os.path.join(directory, META_FILE)
        if os.path.exists(reward_path) or os.path.exists(meta_path):
            if rng is None:
                raise CheckpointError(META_FILE, "fine-tuning state needs a generator to rebuild heads")
            self.start_finetune(rng)
            self.wm.reward_params.load_state_tensors(load_checkpoint(reward_path))
            self.meta.load_state_tensors(load_checkpoint(meta_path))

        rng_path = os.path.join(directory, RNG_FILE)
        if rng is not None and os.path.exists(rng_path):
            load_rng(rng_path, rng)
        logger.info(f"checkpoint loaded from {directory}")


# ---------------------------------------------------------------------------
# Generator state and progress
# ---------------------------------------------------------------------------

def save_rng(path: str, rng: torch.Generator) -> None:
    tmp_path = path + '.tmp'
    with open(tmp_path, 'wb') as f:
        f.write(bytes(rng.get_state().tolist()))
    os.replace(tmp_path, path)


def load_rng(path: str, rng: torch.Generator) -> None:
    with open(path, 'rb') as f:
        data = f.read()
    try:
        rng.set_state(torch.tensor(list(data), dtype=torch.uint8))
    except RuntimeError as exc:
        raise CheckpointError(RNG_FILE, f"invalid generator state ({exc})") from exc


def save_progress(directory: str, progress: dict) -> None:
    path = os.path.join(directory, PROGRESS_FILE)
    tmp_path = path + '.tmp'
    with open(tmp_path, 'w', encoding='utf-8') as f:
        json.dump(progress, f, indent=2, sort_keys=True)
    os.replace(tmp_path, path)


def load_progress(directory: str) -> Optional[dict]:
    path = os.path.join(directory, PROGRESS_FILE)
    if not os.path.exists(path):
        return None
    with open(path, encoding='utf-8') as f:
        return json.load(f)
