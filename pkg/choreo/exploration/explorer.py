"""
Online data collection policy rewarded by information gain.

    r_expl = KL[q(s_t | s_{t-1}, a_{t-1}, x_t) || p(s_t | s_{t-1}, a_{t-1})]

Real observations do not exist inside imagination, so the reward along an
imagined rollout is closed in one of two ways (``reward_mode``):

  imagined  the posterior head is applied to the decoded imagined observation
            and compared with the prior logits of that step
  replay    a reward head is regressed on the KL of real replayed steps and
            evaluated on imagined states
"""

import logging
from typing import Dict, Optional

import torch

from choreo.config.config import SkillConfig
from choreo.errors import ContractViolation
from choreo.skills.actor_critic import (
    ActorHead,
    CriticHead,
    actor_critic_update,
    critic_loss,
    imagine_with_actor,
    lambda_returns,
)
from choreo.substrate.core import (
    ParamSet,
    adam_step,
    backward,
    clip_grad_norm,
    initialize,
)
from choreo.world_model.rssm import ImaginedTrajectory, ModelState, WorldModel, kl_categorical

logger = logging.getLogger(__name__)

REWARD_MODES = ('imagined', 'replay')


def lbs_reward(
    posterior_logits: torch.Tensor,
    prior_logits: torch.Tensor,
    classes: Optional[int] = None,
) -> torch.Tensor:
    """Information gain of an observation; equal to ``kl_categorical``."""
    return kl_categorical(posterior_logits, prior_logits, classes)


class ExplorationPolicy:
    """
    Unconditioned actor pi(a | s) and critic v(s) over model-state features.

    Args:
        feat_dim:    Size of ``ModelState.features()``.
        act_dim:     Action size.
        cfg:         Skill section; exploration shares its actor-critic settings.
        rng:         Generator for weight initialisation.
        reward_mode: ``imagined`` or ``replay``.
    """

    def __init__(self, feat_dim: int, act_dim: int, cfg: SkillConfig, rng: torch.Generator,
                 reward_mode: str = 'imagined'):
        if reward_mode not in REWARD_MODES:
            raise ContractViolation(f"reward_mode must be one of {REWARD_MODES}, got '{reward_mode}'")
        self.cfg = cfg
        self.reward_mode = reward_mode
        self.actor = initialize(
            ActorHead(feat_dim, act_dim, cfg.hidden, cfg.layers, cfg.std_min, cfg.std_max), rng
        )
        self.critic = initialize(CriticHead(feat_dim, cfg.hidden, cfg.layers), rng)
        self.actor_params  = ParamSet(self.actor, lr=cfg.actor_lr)
        self.critic_params = ParamSet(self.critic, lr=cfg.critic_lr)

        self.reward_net = None
        self.reward_params: Optional[ParamSet] = None
        if reward_mode == 'replay':
            self.reward_net = initialize(CriticHead(feat_dim, cfg.hidden, cfg.layers), rng)
            self.reward_params = ParamSet(self.reward_net, lr=cfg.critic_lr)

    def act(self, state: ModelState, rng: Optional[torch.Generator] = None) -> torch.Tensor:
        with torch.no_grad():
            d = self.actor(state.features())
            return d.mean if rng is None else d.sample(rng)

    def fit_reward(self, states: ModelState, info_gain: torch.Tensor) -> float:
        """One regression step of the replay reward head on real information gain."""
        if self.reward_net is None:
            raise ContractViolation("fit_reward() needs reward_mode='replay'")
        loss = critic_loss(self.reward_net, states.features(), info_gain)
        grads = clip_grad_norm(backward(loss, self.reward_params.named()), self.cfg.grad_clip)
        adam_step(self.reward_params, grads)
        return float(loss)

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        out = self.actor_params.state_tensors('actor/')
        out.update(self.critic_params.state_tensors('critic/'))
        if self.reward_params is not None:
            out.update(self.reward_params.state_tensors('reward/'))
        return out

    def load_state_tensors(self, tensors: Dict[str, torch.Tensor]) -> None:
        self.actor_params.load_state_tensors(tensors, 'actor/')
        self.critic_params.load_state_tensors(tensors, 'critic/')
        if self.reward_params is not None:
            self.reward_params.load_state_tensors(tensors, 'reward/')


def imagined_information_gain(wm: WorldModel, traj: ImaginedTrajectory) -> torch.Tensor:
    """KL between the posterior on decoded observations and the prior, (H, B)."""
    states = traj.states[1:]
    obs_hat = wm.decode(states)
    post_logits = wm.posterior_logits(states.deter, obs_hat)
    return lbs_reward(post_logits, states.logits, wm.classes)


def train_exploration(
    wm: WorldModel,
    policy: ExplorationPolicy,
    start_states: ModelState,
    rng: torch.Generator,
    info_gain: Optional[torch.Tensor] = None,
) -> Dict[str, float]:
    """
    One imagination update of the exploration actor-critic.

    In ``replay`` mode ``info_gain`` must hold the KL of the real steps that
    produced ``start_states`` (same leading shape); the reward head is fitted
    on it before the rollout.
    """
    cfg = policy.cfg
    start = start_states.flatten().detach()
    metrics: Dict[str, float] = {}

    if policy.reward_mode == 'replay':
        if info_gain is None:
            raise ContractViolation("train_exploration in replay mode needs info_gain of the real steps")
        metrics['expl_reward_fit'] = policy.fit_reward(start, info_gain.reshape(-1))

    traj = imagine_with_actor(wm, start, lambda s: policy.actor(s.features()), cfg.horizon, rng)
    if traj.horizon == 0:
        return metrics

    if policy.reward_mode == 'imagined':
        rewards = imagined_information_gain(wm, traj)
    else:
        rewards = policy.reward_net(traj.states[1:].features())
    traj.rewards = rewards

    values = policy.critic(traj.states.features())
    targets = lambda_returns(rewards, values, cfg.gamma, cfg.lam)
    actor_loss = -targets.mean() - cfg.actor_entropy * traj.extras['entropy'].mean()
    metrics.update(actor_critic_update(
        policy.actor_params, policy.critic_params, policy.critic,
        traj.states[:-1].features(), targets, actor_loss, cfg.grad_clip,
    ))
    metrics['expl_reward'] = float(rewards.mean())
    return metrics
