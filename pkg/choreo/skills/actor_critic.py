"""
Actor-critic machinery trained in imagination.

Actors emit a truncated normal over the action box; samples are
reparameterised through the inverse CDF so the value of imagined rollouts
can be differentiated through the world-model dynamics into the actor.
Critics regress stop-gradient lambda-returns.

``train_skills`` runs one update of the skill-conditioned actor-critics.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import torch
from torch import nn
from torch.special import ndtr, ndtri

from choreo.config.config import SkillConfig
from choreo.errors import ContractViolation
from choreo.substrate.core import (
    DTYPE,
    ParamSet,
    adam_step,
    backward,
    check_finite,
    clip_grad_norm,
    initialize,
    mlp,
)
from choreo.skills.codebook import SkillVQ, sample_skill_uniform
from choreo.skills.rewards import skill_reward
from choreo.world_model.rssm import ImaginedTrajectory, ModelState, WorldModel

logger = logging.getLogger(__name__)

_CDF_EPS = 1e-6
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Truncated normal
# ---------------------------------------------------------------------------

def _std_normal_pdf(x: torch.Tensor) -> torch.Tensor:
    return torch.exp(-0.5 * x.square() - _LOG_SQRT_2PI)


class TruncatedNormal:
    """Normal(loc, scale) restricted to [low, high], elementwise."""

    def __init__(self, loc: torch.Tensor, scale: torch.Tensor, low: float = -1.0, high: float = 1.0):
        self.loc   = loc
        self.scale = scale
        self.low   = low
        self.high  = high
        self._alpha = (low - loc) / scale
        self._beta  = (high - loc) / scale
        self._cdf_alpha = ndtr(self._alpha)
        self._mass = (ndtr(self._beta) - self._cdf_alpha).clamp_min(_CDF_EPS)

    def rsample(self, rng: torch.Generator) -> torch.Tensor:
        u = torch.rand(self.loc.shape, generator=rng, dtype=self.loc.dtype)
        p = (self._cdf_alpha + u * self._mass).clamp(_CDF_EPS, 1.0 - _CDF_EPS)
        x = self.loc + self.scale * ndtri(p)
        return x.clamp(self.low, self.high)

    def sample(self, rng: torch.Generator) -> torch.Tensor:
        with torch.no_grad():
            return self.rsample(rng)

    @property
    def mean(self) -> torch.Tensor:
        shift = (_std_normal_pdf(self._alpha) - _std_normal_pdf(self._beta)) / self._mass
        return (self.loc + self.scale * shift).clamp(self.low, self.high)

    def entropy(self) -> torch.Tensor:
        a, b = self._alpha, self._beta
        return (
            _LOG_SQRT_2PI + 0.5 + torch.log(self.scale) + torch.log(self._mass)
            + (a * _std_normal_pdf(a) - b * _std_normal_pdf(b)) / (2.0 * self._mass)
        )


class ActorHead(nn.Module):
    """MLP emitting a truncated normal: mean squashed by tanh, std into [std_min, std_max]."""

    def __init__(self, in_dim: int, act_dim: int, hidden: int, layers: int,
                 std_min: float = 0.1, std_max: float = 1.0):
        super().__init__()
        self.act_dim = act_dim
        self.std_min = std_min
        self.std_max = std_max
        self.body = mlp(in_dim, 2 * act_dim, hidden, layers)

    def forward(self, x: torch.Tensor) -> TruncatedNormal:
        raw = check_finite(self.body(x), 'actor_head')
        loc = torch.tanh(raw[..., :self.act_dim])
        std = self.std_min + (self.std_max - self.std_min) * torch.sigmoid(raw[..., self.act_dim:])
        return TruncatedNormal(loc, std)


class CriticHead(nn.Module):

    def __init__(self, in_dim: int, hidden: int, layers: int):
        super().__init__()
        self.body = mlp(in_dim, 1, hidden, layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x).squeeze(-1)


# ---------------------------------------------------------------------------
# Returns
# ---------------------------------------------------------------------------

def lambda_returns(
    rewards: torch.Tensor,
    values: torch.Tensor,
    gamma: float,
    lam: float,
) -> torch.Tensor:
    """
    G_t = r_t + gamma * ((1 - lam) * v_{t+1} + lam * G_{t+1}), G_H = v_H.

    ``rewards[t]`` is the reward for reaching state t+1; ``values`` has one
    more leading entry than ``rewards``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"lambda must be in [0, 1], got {lam}")
    if not 0.0 < gamma <= 1.0:
        raise ContractViolation(f"gamma must be in (0, 1], got {gamma}")
    horizon = rewards.shape[0]
    if values.shape[0] != horizon + 1:
        raise ContractViolation(f"values need H+1={horizon + 1} entries, got {values.shape[0]}")
    if horizon == 0:
        return rewards.new_zeros(rewards.shape)
    returns: List[torch.Tensor] = [None] * horizon
    last = values[horizon]
    for t in reversed(range(horizon)):
        last = rewards[t] + gamma * ((1.0 - lam) * values[t + 1] + lam * last)
        returns[t] = last
    return check_finite(torch.stack(returns, dim=0), 'lambda_returns')


# ---------------------------------------------------------------------------
# Shared update
# ---------------------------------------------------------------------------

def critic_loss(
    critic: Callable[[torch.Tensor], torch.Tensor],
    inputs: torch.Tensor,
    targets: torch.Tensor,
) -> torch.Tensor:
    """Half mean squared error of ``critic(inputs)`` against ``targets``; both inputs detached."""
    values = critic(inputs.detach())
    return 0.5 * (values - targets.detach()).square().mean()


def actor_critic_update(
    actor_params: ParamSet,
    critic_params: ParamSet,
    critic: Callable[[torch.Tensor], torch.Tensor],
    critic_inputs: torch.Tensor,
    targets: torch.Tensor,
    actor_loss: torch.Tensor,
    grad_clip: float,
    update_actor: bool = True,
) -> Dict[str, float]:
    """
    Apply one actor step on ``actor_loss`` and one critic step regressing
    ``critic(critic_inputs)`` to the detached ``targets``.

    The actor gradient is taken first so the graph it flows through is
    still intact.
    """
    metrics = {'actor_loss': float(actor_loss)}
    if update_actor:
        actor_grads = clip_grad_norm(backward(actor_loss, actor_params.named()), grad_clip)
        adam_step(actor_params, actor_grads)

    loss = critic_loss(critic, critic_inputs, targets)
    critic_grads = clip_grad_norm(backward(loss, critic_params.named()), grad_clip)
    adam_step(critic_params, critic_grads)
    metrics['critic_loss'] = float(loss)
    return metrics


# ---------------------------------------------------------------------------
# Skill policies
# ---------------------------------------------------------------------------

class SkillPolicySet:
    """
    Skill-conditioned actor pi(a | s, z) and critic v(s, z).

    Inputs are the deterministic state concatenated with the code vector
    of the skill, so policies follow codes that get resampled.

    Args:
        deter_dim: Size of ModelState.deter.
        code_dim:  Size of a codebook row.
        act_dim:   Action size.
        cfg:       Skill section of the run configuration.
        rng:       Generator for weight initialisation.
    """

    def __init__(self, deter_dim: int, code_dim: int, act_dim: int, cfg: SkillConfig, rng: torch.Generator):
        self.cfg   = cfg
        self.gamma = cfg.gamma
        self.lam   = cfg.lam
        self.act_dim = act_dim
        in_dim = deter_dim + code_dim
        self.actor = initialize(
            ActorHead(in_dim, act_dim, cfg.hidden, cfg.layers, cfg.std_min, cfg.std_max), rng
        )
        self.critic = initialize(CriticHead(in_dim, cfg.hidden, cfg.layers), rng)
        self.actor_params  = ParamSet(self.actor, lr=cfg.actor_lr)
        self.critic_params = ParamSet(self.critic, lr=cfg.critic_lr)

    def dist(self, deter: torch.Tensor, code_vec: torch.Tensor) -> TruncatedNormal:
        return self.actor(torch.cat([deter, code_vec], dim=-1))

    def value(self, deter: torch.Tensor, code_vec: torch.Tensor) -> torch.Tensor:
        out = self.critic(torch.cat([deter, code_vec], dim=-1))
        return check_finite(out, 'skill_critic')

    def act(self, deter: torch.Tensor, code_vec: torch.Tensor, rng: Optional[torch.Generator] = None) -> torch.Tensor:
        """Environment action: a sample when ``rng`` is given, otherwise the mean."""
        with torch.no_grad():
            d = self.dist(deter, code_vec)
            return d.mean if rng is None else d.sample(rng)

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        out = self.actor_params.state_tensors('actor/')
        out.update(self.critic_params.state_tensors('critic/'))
        return out

    def load_state_tensors(self, tensors: Dict[str, torch.Tensor]) -> None:
        self.actor_params.load_state_tensors(tensors, 'actor/')
        self.critic_params.load_state_tensors(tensors, 'critic/')


def imagine_with_actor(
    wm: WorldModel,
    start: ModelState,
    actor: Callable[[ModelState], TruncatedNormal],
    horizon: int,
    rng: torch.Generator,
) -> ImaginedTrajectory:
    """Imagination rollout that also keeps the entropy of every action distribution."""
    entropies: List[torch.Tensor] = []

    def policy(state: ModelState) -> torch.Tensor:
        d = actor(state)
        entropies.append(d.entropy().sum(dim=-1))
        return d.rsample(rng)

    traj = wm.imagine(start, policy, horizon, rng)
    if entropies:
        traj.extras['entropy'] = torch.stack(entropies, dim=0)
    else:
        traj.extras['entropy'] = torch.zeros(0, *start.batch_shape, dtype=DTYPE)
    return traj


def skill_objective(
    wm: WorldModel,
    vq: SkillVQ,
    policies: SkillPolicySet,
    start_states: ModelState,
    rng: torch.Generator,
) -> Optional[Tuple[torch.Tensor, torch.Tensor, torch.Tensor, ImaginedTrajectory]]:
    """
    Imagined rollout under uniformly drawn skills and the losses it defines.

    Returns ``(actor_loss, critic_inputs, targets, trajectory)``, or None
    when the horizon is zero.  Nothing is updated.
    """
    cfg = policies.cfg
    start = start_states.flatten().detach()
    batch = start.batch_shape[0]
    codes = sample_skill_uniform(vq.N, rng, size=batch)
    code_vecs = vq.codebook.codes[codes].detach()

    traj = imagine_with_actor(
        wm, start, lambda s: policies.dist(s.deter, code_vecs), cfg.horizon, rng
    )
    traj.codes = codes
    if traj.horizon == 0:
        return None

    rewards = skill_reward(traj, vq, cfg.knn_k)
    values = policies.value(traj.states.deter, code_vecs.expand(traj.horizon + 1, -1, -1))
    targets = lambda_returns(rewards, values, policies.gamma, policies.lam)
    actor_loss = -targets.mean() - cfg.actor_entropy * traj.extras['entropy'].mean()
    critic_inputs = torch.cat([traj.states.deter[:-1], code_vecs.expand(traj.horizon, -1, -1)], dim=-1)
    return actor_loss, critic_inputs, targets, traj


def train_skills(
    wm: WorldModel,
    vq: SkillVQ,
    policies: SkillPolicySet,
    start_states: ModelState,
    rng: torch.Generator,
) -> Dict[str, float]:
    """
    One imagination update of the skill actor-critics.

    Every start state gets a uniformly drawn skill; the actor maximises the
    lambda-return of r_skill by backpropagating through the dynamics and
    the critic regresses the detached returns.  World model and codebook
    parameters are read but never updated here.
    """
    objective = skill_objective(wm, vq, policies, start_states, rng)
    if objective is None:
        return {'skill_reward': 0.0}
    actor_loss, critic_inputs, targets, traj = objective

    metrics = actor_critic_update(
        policies.actor_params, policies.critic_params, policies.critic,
        critic_inputs, targets, actor_loss, policies.cfg.grad_clip,
    )
    metrics.update({
        'skill_reward': float(traj.rewards.mean()),
        'r_ent':        float(traj.extras['r_ent'].mean()),
        'r_code':       float(traj.extras['r_code'].mean()),
    })
    return metrics
