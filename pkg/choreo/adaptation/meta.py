"""
Fine-tuning meta-controller: a policy over skills trained in imagination on
predicted task rewards.

The meta-actor picks a skill index, the skill actor acts conditioned on
that skill's code vector.  The meta-actor is updated by the score-function
gradient with its critic as baseline; the skill actors are updated by the
pathwise gradient of the same lambda-returns.  The one-hot skill choice
enters the skill-conditioning input through a straight-through estimator.

Until a real reward of at least ``threshold`` has been observed, predicted
rewards and meta values are gated to exactly zero and no update is made.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import torch
from torch.nn import functional as F

from choreo.config.config import MetaConfig, SkillConfig
from choreo.errors import ContractViolation
from choreo.skills.actor_critic import CriticHead, SkillPolicySet, critic_loss, lambda_returns
from choreo.skills.codebook import SkillVQ, sample_skill_uniform
from choreo.substrate.core import (
    DTYPE,
    ParamSet,
    adam_step,
    backward,
    check_finite,
    clip_grad_norm,
    initialize,
    mlp,
    sample_one_hot,
    straight_through,
)
from choreo.world_model.rssm import ModelState, WorldModel

logger = logging.getLogger(__name__)

Number = Union[float, torch.Tensor]


# ---------------------------------------------------------------------------
# Reward smoothing
# ---------------------------------------------------------------------------

@dataclass
class RewardSmoother:
    """Gate that opens for good once a real reward reaches ``threshold``."""

    threshold: float = 1e-4
    armed:     bool = False

    def observe(self, reward: float) -> bool:
        if not self.armed and reward >= self.threshold:
            self.armed = True
            logger.info(f"reward smoother armed by reward {reward:.4g} >= {self.threshold:g}")
        return self.armed

    def smooth(self, predicted: Number) -> Number:
        return smooth(predicted, self)


def smooth(predicted: Number, smoother: RewardSmoother) -> Number:
    """Exactly zero while ``smoother`` is not armed, identity afterwards."""
    if smoother.armed:
        return predicted
    if isinstance(predicted, torch.Tensor):
        return torch.zeros_like(predicted)
    return 0.0


# ---------------------------------------------------------------------------
# Meta-controller
# ---------------------------------------------------------------------------

def score_function_loss(
    logits: torch.Tensor,
    choices: torch.Tensor,
    advantages: torch.Tensor,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Surrogate whose gradient is the negative score-function estimate
    ``-E[adv * grad log pi(choice)]``.
    """
    log_probs = F.log_softmax(logits, dim=-1)
    logp = (log_probs * choices.detach()).sum(dim=-1)
    weighted = logp * advantages.detach()
    if mask is None:
        return -weighted.mean()
    return -(weighted * mask).sum() / mask.sum().clamp_min(1.0)


class MetaController:
    """
    pi_meta(z | s) over N skill indices and v_meta(s).

    Args:
        feat_dim:  Size of ``ModelState.features()``.
        num_skills: N.
        cfg:       Meta section of the run configuration.
        skill_cfg: Skill section; supplies horizon, gamma, lambda, network sizes.
        rng:       Generator for weight initialisation.
    """

    def __init__(self, feat_dim: int, num_skills: int, cfg: MetaConfig, skill_cfg: SkillConfig,
                 rng: torch.Generator):
        self.cfg        = cfg
        self.skill_cfg  = skill_cfg
        self.N          = num_skills
        self.entropy_coef = cfg.entropy_coef
        self.actor  = initialize(mlp(feat_dim, num_skills, skill_cfg.hidden, skill_cfg.layers), rng)
        self.critic = initialize(CriticHead(feat_dim, skill_cfg.hidden, skill_cfg.layers), rng)
        self.actor_params  = ParamSet(self.actor, lr=cfg.actor_lr)
        self.critic_params = ParamSet(self.critic, lr=cfg.critic_lr)
        self.smoother = RewardSmoother(cfg.smoother_threshold)
        self.held_skill: Optional[int] = None

    def probs(self, feats: torch.Tensor) -> torch.Tensor:
        return F.softmax(check_finite(self.actor(feats), 'meta_actor'), dim=-1)

    def value(self, feats: torch.Tensor) -> torch.Tensor:
        """Critic output passed through the reward smoother."""
        return smooth(self.critic(feats), self.smoother)

    def begin_episode(self) -> None:
        self.held_skill = None

    def losses(
        self,
        feats: torch.Tensor,
        choices: torch.Tensor,
        returns: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> Dict[str, torch.Tensor]:
        """
        Actor loss (score function with critic baseline minus the entropy
        bonus), critic loss on ``returns`` and the mean policy entropy.

        feats: (..., F) inputs; choices: (..., N) one-hot skills;
        returns: (...) targets; mask: (...) 1 where a skill was chosen.
        """
        feats = feats.detach()
        logits = self.actor(feats)
        log_probs = F.log_softmax(logits, dim=-1)
        entropy = -(log_probs.exp() * log_probs).sum(dim=-1)
        baseline = self.value(feats).detach()
        pg_loss = score_function_loss(logits, choices, returns - baseline, mask)
        if mask is None:
            ent = entropy.mean()
        else:
            ent = (entropy * mask).sum() / mask.sum().clamp_min(1.0)
        return {
            'actor':   pg_loss - self.entropy_coef * ent,
            'critic':  critic_loss(self.critic, feats, returns),
            'entropy': ent,
        }

    def update(
        self,
        feats: torch.Tensor,
        choices: torch.Tensor,
        returns: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> Dict[str, float]:
        """One actor step and one critic step on the losses of ``losses()``."""
        losses = self.losses(feats, choices, returns, mask)
        grads = clip_grad_norm(backward(losses['actor'], self.actor_params.named()), self.skill_cfg.grad_clip)
        adam_step(self.actor_params, grads)
        grads = clip_grad_norm(backward(losses['critic'], self.critic_params.named()), self.skill_cfg.grad_clip)
        adam_step(self.critic_params, grads)
        return {
            'meta_actor_loss':  float(losses['actor']),
            'meta_critic_loss': float(losses['critic']),
            'meta_entropy':     float(losses['entropy']),
        }

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        out = self.actor_params.state_tensors('actor/')
        out.update(self.critic_params.state_tensors('critic/'))
        out['smoother/armed'] = torch.tensor([1.0 if self.smoother.armed else 0.0], dtype=DTYPE)
        return out

    def load_state_tensors(self, tensors: Dict[str, torch.Tensor]) -> None:
        self.actor_params.load_state_tensors(tensors, 'actor/')
        self.critic_params.load_state_tensors(tensors, 'critic/')
        self.smoother.armed = bool(tensors['smoother/armed'].reshape(-1)[0] > 0.5)


def select_skill(
    meta: MetaController,
    state: ModelState,
    rng: torch.Generator,
    mode: str = 'sample',
) -> int:
    """
    Skill for the current step of a single running episode.

    While the smoother is not armed one uniform skill is held for the whole
    episode (cleared by ``meta.begin_episode()``).  Greedy ties go to the
    lowest index.
    """
    if mode not in ('sample', 'greedy'):
        raise ContractViolation(f"select_skill mode must be sample|greedy, got '{mode}'")
    if not meta.smoother.armed:
        if meta.held_skill is None:
            meta.held_skill = sample_skill_uniform(meta.N, rng)
        return meta.held_skill
    with torch.no_grad():
        probs = meta.probs(state.features()).reshape(-1, meta.N)[0]
        if mode == 'greedy':
            return int(torch.argmax(probs))
        return int(torch.multinomial(probs, 1, generator=rng))


# ---------------------------------------------------------------------------
# Imagination training
# ---------------------------------------------------------------------------

def train_meta(
    wm: WorldModel,
    vq: SkillVQ,
    skills: SkillPolicySet,
    meta: MetaController,
    start_states: ModelState,
    rng: torch.Generator,
    freeze_skills: bool = False,
) -> Dict[str, float]:
    """
    One imagination update of the meta-controller and the skill actors.

    A skill is drawn from pi_meta every ``meta.cfg.skill_every`` imagined
    steps.  Rewards come from the world-model reward head; rewards and
    meta values pass through the smoother.  Returns an empty update
    (``meta_updates = 0``) while the smoother is not armed.
    """
    if not meta.smoother.armed:
        return {'meta_updates': 0.0}

    start = start_states.flatten().detach()
    codes = vq.codebook.codes.detach()
    every = meta.cfg.skill_every
    feats: List[torch.Tensor] = []
    choices: List[torch.Tensor] = []
    masks: List[torch.Tensor] = []
    current: Dict[str, torch.Tensor] = {}

    def policy(state: ModelState) -> torch.Tensor:
        t = len(feats)
        f = state.features().detach()
        if t % every == 0:
            probs = meta.probs(f)
            hard = sample_one_hot(probs, rng)
            current['soft'] = straight_through(hard, probs)
            current['hard'] = hard
            masks.append(torch.ones(f.shape[0], dtype=DTYPE))
        else:
            masks.append(torch.zeros(f.shape[0], dtype=DTYPE))
        feats.append(f)
        choices.append(current['hard'])
        code_vec = current['soft'] @ codes
        return skills.dist(state.deter, code_vec).rsample(rng)

    traj = wm.imagine(start, policy, meta.skill_cfg.horizon, rng)
    if traj.horizon == 0:
        return {'meta_updates': 0.0}

    rewards = smooth(wm.predict_reward(traj.states[1:]), meta.smoother)
    values = meta.value(traj.states.features())
    targets = lambda_returns(rewards, values, meta.skill_cfg.gamma, meta.skill_cfg.lam)
    traj.rewards = rewards

    metrics: Dict[str, float] = {'meta_updates': 1.0, 'meta_return': float(targets.mean())}
    if not freeze_skills:
        skill_loss = -targets.mean()
        grads = clip_grad_norm(backward(skill_loss, skills.actor_params.named()), meta.skill_cfg.grad_clip)
        adam_step(skills.actor_params, grads)
        metrics['skill_adapt_loss'] = float(skill_loss)

    metrics.update(meta.update(
        torch.stack(feats, dim=0), torch.stack(choices, dim=0), targets, torch.stack(masks, dim=0)
    ))
    return metrics
