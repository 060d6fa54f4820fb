"""
Intrinsic rewards for skill learning.

  r_ent   mean L2 distance to the K nearest other states of the same batch
  r_code  negative L2 distance between a state and the decoded skill code
  r_skill r_ent + r_code, no scaling

Both terms read only latent quantities.  States are the deterministic part
of model states, the same space the skill autoencoder reconstructs.
"""

import logging

import torch

from choreo.errors import ContractViolation
from choreo.substrate.core import check_finite
from choreo.world_model.rssm import ImaginedTrajectory

logger = logging.getLogger(__name__)


def knn_entropy_reward(states: torch.Tensor, k: int) -> torch.Tensor:
    """
    Particle-based entropy reward for a (B, D) batch; returns (B,).

    Each state's own zero distance is excluded from its neighbours.
    """
    if states.dim() != 2:
        raise ContractViolation(f"knn_entropy_reward needs a (B, D) batch, got {tuple(states.shape)}")
    n = states.shape[0]
    if n <= k:
        raise ContractViolation(f"knn_entropy_reward needs batch > K, got batch={n}, K={k}")
    dist = torch.linalg.vector_norm(states.unsqueeze(1) - states.unsqueeze(0), dim=-1)
    self_mask = torch.eye(n, dtype=torch.bool)
    dist = dist.masked_fill(self_mask, float('inf'))
    nearest = torch.topk(dist, k, dim=-1, largest=False, sorted=True).values
    return check_finite(nearest.mean(dim=-1), 'knn_entropy_reward')


def code_reward(states: torch.Tensor, code: torch.Tensor, decoder) -> torch.Tensor:
    """
    ``-||D(z) - s||`` per state; ``code`` broadcasts against the batch.

    The decoded target is a constant for this computation.
    """
    with torch.no_grad():
        target = decoder(code)
    return -torch.linalg.vector_norm(states - target, dim=-1)


def skill_reward(trajectory: ImaginedTrajectory, vq, k: int) -> torch.Tensor:
    """
    r_skill for every imagined transition, shape (H, B).

    The K-NN pool at step t is the set of all B imagined states at that step.
    Component terms are left in ``trajectory.extras`` under ``r_ent`` and
    ``r_code``.
    """
    if trajectory.codes is None:
        raise ContractViolation("skill_reward needs a trajectory conditioned on skill codes")
    codes = trajectory.codes
    if int(codes.min()) < 0 or int(codes.max()) >= vq.N:
        raise ContractViolation(f"skill codes out of range [0, {vq.N})")

    deter = trajectory.states.deter[1:]            # (H, B, D_h)
    code_vecs = vq.codebook.codes[codes]            # (B, d_z) or (H, B, d_z)
    if code_vecs.dim() == 2:
        code_vecs = code_vecs.expand(deter.shape[0], -1, -1)

    r_code = code_reward(deter, code_vecs, vq.decode)
    if deter.shape[0] == 0:
        r_ent = torch.zeros_like(r_code)
    else:
        r_ent = torch.stack([knn_entropy_reward(step, k) for step in deter], dim=0)
    trajectory.extras['r_ent'] = r_ent
    trajectory.extras['r_code'] = r_code
    rewards = r_ent + r_code
    trajectory.rewards = rewards
    return rewards
