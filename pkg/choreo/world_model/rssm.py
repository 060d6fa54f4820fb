"""
Latent dynamics model: posterior, prior, observation decoder and the
fine-tuning-only reward head, trained with the evidence lower bound

    L = KL[q(s_t | s_{t-1}, a_{t-1}, x_t) || p(s_t | s_{t-1}, a_{t-1})] - log p(x_t | s_t)

Model states combine the GRU hidden vector (``deter``) with a one-hot sample
over ``groups`` categorical distributions of ``classes`` classes each
(``stoch``).  Posterior and prior share the recurrence exactly; they differ
only in the head that turns ``deter`` into logits.

Batch convention: ``actions[:, t]`` is the action that produced ``obs[:, t]``
(zeros at the start of an episode), so the recurrence at step t consumes
``actions[:, t]`` together with the previous state.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.nn import functional as F

from choreo.config.config import ModelConfig
from choreo.errors import ContractViolation
from choreo.substrate.core import (
    DTYPE,
    ParamSet,
    adam_step,
    backward,
    check_finite,
    clip_grad_norm,
    gru_step,
    initialize,
    mlp,
    sample_one_hot,
    straight_through,
)

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Model state
# ---------------------------------------------------------------------------

@dataclass
class ModelState:
    """
    Latent state ``s_t``; every field carries the same leading batch shape.

    deter:  (..., D_h) GRU hidden vector
    stoch:  (..., G*C) one-hot sample, one active class per group
    logits: (..., G*C) logits of the distribution ``stoch`` was drawn from
    """

    deter:  torch.Tensor
    stoch:  torch.Tensor
    logits: torch.Tensor

    @property
    def batch_shape(self) -> torch.Size:
        return self.deter.shape[:-1]

    def features(self) -> torch.Tensor:
        return torch.cat([self.deter, self.stoch], dim=-1)

    def detach(self) -> 'ModelState':
        return ModelState(self.deter.detach(), self.stoch.detach(), self.logits.detach())

    def flatten(self) -> 'ModelState':
        """Collapse all leading dimensions into one batch dimension."""
        return ModelState(
            self.deter.reshape(-1, self.deter.shape[-1]),
            self.stoch.reshape(-1, self.stoch.shape[-1]),
            self.logits.reshape(-1, self.logits.shape[-1]),
        )

    def __getitem__(self, index) -> 'ModelState':
        return ModelState(self.deter[index], self.stoch[index], self.logits[index])

    @staticmethod
    def stack(states: Sequence['ModelState'], dim: int = 0) -> 'ModelState':
        return ModelState(
            torch.stack([s.deter for s in states], dim=dim),
            torch.stack([s.stoch for s in states], dim=dim),
            torch.stack([s.logits for s in states], dim=dim),
        )


@dataclass
class ImaginedTrajectory:
    """
    Rollout of the prior under a policy.

    states:  ModelState with leading shape (H+1, B); index 0 holds the start states
    actions: (H, B, A) actions; ``actions[t]`` moves ``states[t]`` to ``states[t+1]``
    rewards: (H, B) rewards for arriving at ``states[t+1]``, filled by the consumer
    codes:   skill indices conditioning the rollout, (B,) or (H, B), when any
    """

    states:  ModelState
    actions: torch.Tensor
    rewards: Optional[torch.Tensor] = None
    codes:   Optional[torch.Tensor] = None
    extras:  Dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


# ---------------------------------------------------------------------------
# KL divergence between categorical groups
# ---------------------------------------------------------------------------

def kl_categorical(
    q_logits: torch.Tensor,
    p_logits: torch.Tensor,
    classes: Optional[int] = None,
) -> torch.Tensor:
    """
    Sum over groups of ``Σ_c q_c (log q_c − log p_c)``.

    Logits are flattened groups × classes on the last axis; ``classes``
    defaults to the whole axis (a single group).  Returns one value per
    leading index.
    """
    if q_logits.shape != p_logits.shape:
        raise ContractViolation(
            f"kl_categorical shapes differ: {tuple(q_logits.shape)} vs {tuple(p_logits.shape)}"
        )
    classes = classes or q_logits.shape[-1]
    lead = q_logits.shape[:-1]
    log_q = F.log_softmax(q_logits.reshape(*lead, -1, classes), dim=-1)
    log_p = F.log_softmax(p_logits.reshape(*lead, -1, classes), dim=-1)
    return (log_q.exp() * (log_q - log_p)).sum(dim=(-1, -2))


# ---------------------------------------------------------------------------
# World model
# ---------------------------------------------------------------------------

class WorldModel:
    """
    Recurrent latent model with categorical stochastic state.

    Args:
        obs_dim: Observation size.
        act_dim: Action size.
        cfg:     Model section of the run configuration.
        rng:     Generator used for weight initialisation.
    """

    def __init__(self, obs_dim: int, act_dim: int, cfg: ModelConfig, rng: torch.Generator):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.cfg     = cfg
        self.deter_dim  = cfg.deter
        self.groups     = cfg.groups
        self.classes    = cfg.classes
        self.stoch_dim  = cfg.groups * cfg.classes
        self.feat_dim   = cfg.deter + self.stoch_dim

        hidden, layers = cfg.hidden, cfg.layers
        self.net = nn.ModuleDict({
            'encoder':   mlp(obs_dim, hidden, hidden, layers),
            'img_in':    nn.Sequential(nn.Linear(self.stoch_dim + act_dim, hidden, dtype=DTYPE), nn.Tanh()),
            'gru':       nn.GRUCell(hidden, cfg.deter, dtype=DTYPE),
            'prior':     mlp(cfg.deter, self.stoch_dim, hidden, layers),
            'posterior': mlp(cfg.deter + hidden, self.stoch_dim, hidden, layers),
            'decoder':   mlp(self.feat_dim, obs_dim, hidden, layers),
        })
        initialize(self.net, rng)
        self.params = ParamSet(self.net, lr=cfg.lr)

        self.reward_net: Optional[nn.Module] = None
        self.reward_params: Optional[ParamSet] = None

    # ------------------------------------------------------------------
    # Reward head (fine-tuning only)
    # ------------------------------------------------------------------

    @property
    def has_reward_head(self) -> bool:
        return self.reward_net is not None

    def enable_reward_head(self, rng: torch.Generator) -> None:
        """Create the reward head; called once when fine-tuning starts."""
        if self.reward_net is not None:
            return
        self.reward_net = initialize(mlp(self.feat_dim, 1, self.cfg.hidden, self.cfg.layers), rng)
        self.reward_params = ParamSet(self.reward_net, lr=self.cfg.lr)
        logger.info("world model: reward head enabled")

    def predict_reward(self, state: ModelState) -> torch.Tensor:
        """Mean of p(r_t | s_t) per state."""
        if self.reward_net is None:
            raise ContractViolation("predict_reward() called before fine-tuning enabled the reward head")
        return check_finite(self.reward_net(state.features()).squeeze(-1), 'predict_reward')

    # ------------------------------------------------------------------
    # Single steps
    # ------------------------------------------------------------------

    def initial_state(self, batch: int) -> ModelState:
        return ModelState(
            torch.zeros(batch, self.deter_dim, dtype=DTYPE),
            torch.zeros(batch, self.stoch_dim, dtype=DTYPE),
            torch.zeros(batch, self.stoch_dim, dtype=DTYPE),
        )

    def _check_shapes(self, prev: ModelState, prev_action: torch.Tensor) -> None:
        if prev.deter.shape[-1] != self.deter_dim or prev.stoch.shape[-1] != self.stoch_dim:
            raise ContractViolation(
                f"model state sizes {prev.deter.shape[-1]}/{prev.stoch.shape[-1]} "
                f"!= {self.deter_dim}/{self.stoch_dim}"
            )
        if prev_action.shape[-1] != self.act_dim:
            raise ContractViolation(f"action size {prev_action.shape[-1]} != {self.act_dim}")

    def recurrent(self, prev: ModelState, prev_action: torch.Tensor) -> torch.Tensor:
        """Shared deterministic path of posterior and prior."""
        x = self.net['img_in'](torch.cat([prev.stoch, prev_action], dim=-1))
        return gru_step(prev.deter, x, self.net['gru'])

    def sample_stoch(self, logits: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
        """Straight-through one-hot sample per group (gradient = gradient of probabilities)."""
        lead = logits.shape[:-1]
        probs = F.softmax(logits.reshape(*lead, self.groups, self.classes), dim=-1)
        hard = sample_one_hot(probs, rng)
        return straight_through(hard, probs).reshape(*lead, self.stoch_dim)

    def posterior_logits(self, deter: torch.Tensor, obs: torch.Tensor) -> torch.Tensor:
        embed = self.net['encoder'](obs)
        return self.net['posterior'](torch.cat([deter, embed], dim=-1))

    def prior_logits(self, deter: torch.Tensor) -> torch.Tensor:
        return self.net['prior'](deter)

    def posterior_step(
        self,
        prev: ModelState,
        prev_action: torch.Tensor,
        obs: torch.Tensor,
        rng: torch.Generator,
    ) -> ModelState:
        """q(s_t | s_{t-1}, a_{t-1}, x_t)."""
        self._check_shapes(prev, prev_action)
        if obs.shape[-1] != self.obs_dim:
            raise ContractViolation(f"observation size {obs.shape[-1]} != {self.obs_dim}")
        deter  = self.recurrent(prev, prev_action)
        logits = check_finite(self.posterior_logits(deter, obs), 'posterior_step')
        return ModelState(deter, self.sample_stoch(logits, rng), logits)

    def prior_step(
        self,
        prev: ModelState,
        prev_action: torch.Tensor,
        rng: torch.Generator,
    ) -> ModelState:
        """p(s_t | s_{t-1}, a_{t-1})."""
        self._check_shapes(prev, prev_action)
        deter  = self.recurrent(prev, prev_action)
        logits = check_finite(self.prior_logits(deter), 'prior_step')
        return ModelState(deter, self.sample_stoch(logits, rng), logits)

    def decode(self, state: ModelState) -> torch.Tensor:
        """Mean of p(x_t | s_t)."""
        return self.net['decoder'](state.features())

    def kl(self, q_logits: torch.Tensor, p_logits: torch.Tensor) -> torch.Tensor:
        return kl_categorical(q_logits, p_logits, self.classes)

    # ------------------------------------------------------------------
    # Sequences
    # ------------------------------------------------------------------

    def observe(
        self,
        obs: torch.Tensor,
        actions: torch.Tensor,
        rng: torch.Generator,
        start: Optional[ModelState] = None,
    ) -> Tuple[ModelState, torch.Tensor]:
        """
        Filter a batch of sequences with the posterior.

        Returns posterior states with leading shape (B, T) and the matching
        prior logits (B, T, G*C).
        """
        batch, steps = obs.shape[0], obs.shape[1]
        embed = self.net['encoder'](obs)
        state = start if start is not None else self.initial_state(batch)
        posts: List[ModelState] = []
        priors: List[torch.Tensor] = []
        for t in range(steps):
            deter = self.recurrent(state, actions[:, t])
            prior = self.prior_logits(deter)
            logits = self.net['posterior'](torch.cat([deter, embed[:, t]], dim=-1))
            state = ModelState(deter, self.sample_stoch(logits, rng), logits)
            posts.append(state)
            priors.append(prior)
        return ModelState.stack(posts, dim=1), torch.stack(priors, dim=1)

    def wm_loss(
        self,
        obs: torch.Tensor,
        actions: torch.Tensor,
        rng: torch.Generator,
        rewards: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, ModelState, Dict[str, torch.Tensor]]:
        """
        Negative ELBO averaged over batch and time.

        The reconstruction term is a unit-variance Gaussian log-likelihood,
        constant included.  When ``rewards`` are given and the reward head
        exists its Gaussian negative log-likelihood is added.

        Returns ``(loss, posterior_states, info)``; ``info`` holds the mean KL,
        mean reconstruction NLL, the per-step KL and the prior logits.
        """
        if obs.dim() != 3 or actions.dim() != 3:
            raise ContractViolation("wm_loss expects (B, T, dim) observation and action batches")
        if obs.shape[:2] != actions.shape[:2]:
            raise ContractViolation(
                f"wm_loss batch shapes differ: {tuple(obs.shape[:2])} vs {tuple(actions.shape[:2])}"
            )
        if obs.shape[1] < 2:
            raise ContractViolation(f"wm_loss needs T >= 2, got T={obs.shape[1]}")

        states, prior_logits = self.observe(obs, actions, rng)
        kl = self.kl(states.logits, prior_logits)
        recon = self.decode(states)
        nll = 0.5 * (recon - obs).square().sum(dim=-1) + 0.5 * self.obs_dim * _LOG_2PI
        loss = (kl + nll).mean()
        info = {'kl': kl.mean().detach(), 'recon': nll.mean().detach(),
                'kl_steps': kl.detach(), 'prior_logits': prior_logits.detach()}

        if rewards is not None and self.reward_net is not None:
            pred = self.reward_net(states.features()).squeeze(-1)
            reward_nll = (0.5 * (pred - rewards).square() + 0.5 * _LOG_2PI).mean()
            loss = loss + reward_nll
            info['reward'] = reward_nll.detach()
        check_finite(loss.detach(), 'wm_loss')
        return loss, states, info

    def train_step(
        self,
        obs: torch.Tensor,
        actions: torch.Tensor,
        rng: torch.Generator,
        rewards: Optional[torch.Tensor] = None,
    ) -> Tuple[ModelState, Dict[str, float], torch.Tensor]:
        """
        One optimizer step on the ELBO.

        Returns detached posterior states, scalar metrics and the per-step KL
        (B, T) between posterior and prior.
        """
        loss, states, info = self.wm_loss(obs, actions, rng, rewards)
        params = self.params.named()
        train_reward = rewards is not None and self.reward_params is not None
        if train_reward:
            params.update({f'reward/{k}': v for k, v in self.reward_params.named().items()})
        grads = clip_grad_norm(backward(loss, params), self.cfg.grad_clip)

        adam_step(self.params, {k: grads[k] for k in self.params.named()})
        if train_reward:
            adam_step(self.reward_params, {k: grads[f'reward/{k}'] for k in self.reward_params.named()})

        metrics = {'wm_loss': float(loss), 'kl': float(info['kl']), 'recon': float(info['recon'])}
        if 'reward' in info:
            metrics['reward_nll'] = float(info['reward'])
        return states.detach(), metrics, info['kl_steps']

    # ------------------------------------------------------------------
    # Imagination
    # ------------------------------------------------------------------

    def imagine(
        self,
        start: ModelState,
        policy: Callable[[ModelState], torch.Tensor],
        horizon: int,
        rng: torch.Generator,
    ) -> ImaginedTrajectory:
        """
        Roll the prior forward ``horizon`` steps, sampling actions from ``policy``.

        ``policy`` maps a batch of states to a batch of actions (reparameterised
        samples keep gradients flowing through the dynamics).  No observation
        is decoded.
        """
        if horizon < 0:
            raise ContractViolation(f"imagine() horizon must be >= 0, got {horizon}")
        states = [start]
        actions = []
        state = start
        for _ in range(horizon):
            action = policy(state)
            state = self.prior_step(state, action, rng)
            actions.append(action)
            states.append(state)
        if actions:
            action_tensor = torch.stack(actions, dim=0)
        else:
            action_tensor = torch.zeros(0, *start.batch_shape, self.act_dim, dtype=DTYPE)
        return ImaginedTrajectory(ModelState.stack(states, dim=0), action_tensor)

    # ------------------------------------------------------------------
    # Checkpoint state
    # ------------------------------------------------------------------

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        return self.params.state_tensors()

    def load_state_tensors(self, tensors: Dict[str, torch.Tensor]) -> None:
        self.params.load_state_tensors(tensors)

    def reward_state_tensors(self) -> Dict[str, torch.Tensor]:
        if self.reward_params is None:
            return {}
        return self.reward_params.state_tensors()
