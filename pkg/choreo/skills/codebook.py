"""
Skill discovery: a single-code VQ autoencoder over the deterministic part of
model states.

Each code of the codebook is one skill.  The encoder E maps a state to an
embedding, the embedding is assigned to its nearest code, and the decoder D
reconstructs the state from that code:

    L = ||s - D(z_q)||^2 + beta * ||sg(z_q) - E(s)||^2

Codes receive no gradient; they track the moving average of the embeddings
assigned to them.  Codes left without assignments for ``M`` consecutive
batches are re-initialised from the latest batch, sampling embeddings with
probability proportional to their squared distance from the nearest code.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from choreo.config.config import CodebookConfig
from choreo.errors import CheckpointError, ContractViolation
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

logger = logging.getLogger(__name__)

EXPORT_VERSION = 1


# ---------------------------------------------------------------------------
# Codebook
# ---------------------------------------------------------------------------

class Codebook:
    """
    N skill vectors with their EMA accumulators and inactivity counters.

    Args:
        codes: (N, d_z) initial code rows.
    """

    def __init__(self, codes: torch.Tensor):
        if codes.dim() != 2 or codes.shape[0] < 1:
            raise ContractViolation(f"codebook needs an (N, d_z) matrix, got {tuple(codes.shape)}")
        self.codes = codes.detach().clone().to(DTYPE)
        self.ema_counts = torch.ones(codes.shape[0], dtype=DTYPE)
        self.ema_sums = self.codes.clone()
        self.inactive_batches = torch.zeros(codes.shape[0], dtype=torch.long)

    @classmethod
    def random(cls, num_codes: int, code_dim: int, rng: torch.Generator) -> 'Codebook':
        """Rows uniform in ±1/N."""
        bound = 1.0 / num_codes
        codes = torch.empty(num_codes, code_dim, dtype=DTYPE).uniform_(-bound, bound, generator=rng)
        return cls(codes)

    @property
    def N(self) -> int:
        return self.codes.shape[0]

    @property
    def d_z(self) -> int:
        return self.codes.shape[1]

    def active_mask(self, window: int = 1) -> torch.Tensor:
        """Codes assigned at least once during the last ``window`` batches."""
        return self.inactive_batches < window

    def state_tensors(self, prefix: str = 'codebook/') -> Dict[str, torch.Tensor]:
        return {
            f'{prefix}codes':            self.codes.clone(),
            f'{prefix}ema_counts':       self.ema_counts.clone(),
            f'{prefix}ema_sums':         self.ema_sums.clone(),
            f'{prefix}inactive_batches': self.inactive_batches.to(DTYPE),
        }

    def load_state_tensors(self, tensors: Dict[str, torch.Tensor], prefix: str = 'codebook/') -> None:
        key = f'{prefix}codes'
        if key not in tensors:
            raise CheckpointError(key, "missing")
        if tuple(tensors[key].shape) != tuple(self.codes.shape):
            raise CheckpointError(key, f"shape {tuple(tensors[key].shape)} != {tuple(self.codes.shape)}")
        self.codes = tensors[key].clone().to(DTYPE)
        self.ema_counts = tensors[f'{prefix}ema_counts'].clone().to(DTYPE)
        self.ema_sums = tensors[f'{prefix}ema_sums'].clone().to(DTYPE)
        self.inactive_batches = tensors[f'{prefix}inactive_batches'].round().to(torch.long)


def squared_distances(embeddings: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """(B, N) squared Euclidean distances, computed by explicit differences."""
    return (embeddings.unsqueeze(-2) - codes).square().sum(dim=-1)


def quantize(
    codebook: Codebook,
    embedding: torch.Tensor,
) -> Tuple[Union[int, torch.Tensor], torch.Tensor]:
    """
    Nearest code by Euclidean distance; ties go to the lowest index.

    A single (d_z,) embedding returns ``(int, code row)``; a (B, d_z) batch
    returns ``(LongTensor (B,), codes (B, d_z))``.
    """
    if embedding.shape[-1] != codebook.d_z:
        raise ContractViolation(f"embedding size {embedding.shape[-1]} != code size {codebook.d_z}")
    single = embedding.dim() == 1
    batch = embedding.detach().reshape(-1, codebook.d_z)
    # argmin returns the first minimal index
    indices = torch.argmin(squared_distances(batch, codebook.codes), dim=-1)
    if single:
        index = int(indices[0])
        return index, codebook.codes[index]
    indices = indices.reshape(embedding.shape[:-1])
    return indices, codebook.codes[indices]


def ema_update(
    codebook: Codebook,
    embeddings: torch.Tensor,
    indices: torch.Tensor,
    decay: float,
    eps: float = 1e-5,
) -> Codebook:
    """
    Move assigned codes toward the running mean of their embeddings.

    Codes without assignments this batch keep their row and have their
    inactivity counter incremented; assigned codes have it reset.
    """
    if not 0.0 < decay < 1.0:
        raise ContractViolation(f"ema decay must be in (0, 1), got {decay}")
    embeddings = embeddings.detach().reshape(-1, codebook.d_z)
    indices = indices.reshape(-1)
    one_hot = nn.functional.one_hot(indices, codebook.N).to(DTYPE)   # (B, N)
    counts = one_hot.sum(dim=0)
    sums = one_hot.t() @ embeddings

    codebook.ema_counts = decay * codebook.ema_counts + (1.0 - decay) * counts
    codebook.ema_sums = decay * codebook.ema_sums + (1.0 - decay) * sums

    assigned = counts > 0
    means = codebook.ema_sums / codebook.ema_counts.clamp_min(eps).unsqueeze(-1)
    codebook.codes = torch.where(assigned.unsqueeze(-1), means, codebook.codes)
    codebook.inactive_batches = torch.where(
        assigned, torch.zeros_like(codebook.inactive_batches), codebook.inactive_batches + 1
    )
    return codebook


def resample_weights(embeddings: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """
    Sampling probabilities proportional to squared distance to the nearest code.

    Falls back to uniform weights when every embedding coincides with a code.
    """
    nearest = squared_distances(embeddings, codes).min(dim=-1).values
    total = nearest.sum()
    if float(total) <= 0.0:
        return torch.full_like(nearest, 1.0 / nearest.shape[0])
    return nearest / total


def resample_codes(
    codebook: Codebook,
    batch_embeddings: torch.Tensor,
    rng: torch.Generator,
    period: int,
) -> List[int]:
    """
    Re-initialise every code inactive for at least ``period`` batches.

    Inactive codes are processed in ascending index order; distances are
    recomputed after each overwrite.  A resampled code gets count 1 and sum
    equal to its new row.  Returns the resampled indices.
    """
    embeddings = batch_embeddings.detach().reshape(-1, codebook.d_z)
    if embeddings.shape[0] == 0:
        raise ContractViolation("resample_codes needs a nonempty embedding batch")
    inactive = torch.nonzero(codebook.inactive_batches >= period).reshape(-1).tolist()
    for i in inactive:
        probs = resample_weights(embeddings, codebook.codes)
        j = int(torch.multinomial(probs, 1, generator=rng))
        codebook.codes[i] = embeddings[j]
        codebook.ema_sums[i] = embeddings[j]
        codebook.ema_counts[i] = 1.0
        codebook.inactive_batches[i] = 0
    if inactive:
        logger.info(f"codebook: resampled {len(inactive)} inactive codes {inactive}")
    return inactive


def sample_skill_uniform(
    num_codes: int,
    rng: torch.Generator,
    size: Optional[int] = None,
) -> Union[int, torch.Tensor]:
    """Uniform skill index in {0..N-1}; ``size`` draws a batch."""
    if size is None:
        return int(torch.randint(num_codes, (1,), generator=rng))
    return torch.randint(num_codes, (size,), generator=rng)


def assignment_histogram(indices: torch.Tensor, num_codes: int) -> torch.Tensor:
    return torch.bincount(indices.reshape(-1), minlength=num_codes)


def active_fraction(codebook: Codebook, window: int = 1) -> float:
    return float(codebook.active_mask(window).to(DTYPE).mean())


# ---------------------------------------------------------------------------
# VQ autoencoder
# ---------------------------------------------------------------------------

@dataclass
class VQOutput:
    recon:      torch.Tensor    # (B, D_h)
    indices:    torch.Tensor    # (B,)
    loss:       torch.Tensor    # scalar
    embeddings: torch.Tensor    # (B, d_z) encoder outputs


class SkillVQ:
    """
    Encoder, codebook and decoder of the skill autoencoder.

    Args:
        state_dim: Size of the deterministic model-state vector.
        cfg:       Codebook section of the run configuration.
        rng:       Generator for weight and code initialisation.
    """

    def __init__(self, state_dim: int, cfg: CodebookConfig, rng: torch.Generator, grad_clip: float = 100.0):
        if cfg.beta <= 0:
            raise ContractViolation(f"beta must be > 0, got {cfg.beta}")
        if cfg.resample_every < 1:
            raise ContractViolation(f"resample period must be >= 1, got {cfg.resample_every}")
        self.cfg        = cfg
        self.state_dim  = state_dim
        self.beta       = cfg.beta
        self.M          = cfg.resample_every
        self.resampling = cfg.resampling
        self.grad_clip  = grad_clip
        self.batches    = 0

        self.net = nn.ModuleDict({
            'encoder': mlp(state_dim, cfg.code_dim, cfg.hidden, cfg.layers),
            'decoder': mlp(cfg.code_dim, state_dim, cfg.hidden, cfg.layers),
        })
        initialize(self.net, rng)
        self.params = ParamSet(self.net, lr=cfg.lr)
        self.codebook = Codebook.random(cfg.num_codes, cfg.code_dim, rng)

    @property
    def N(self) -> int:
        return self.codebook.N

    def encode(self, states: torch.Tensor) -> torch.Tensor:
        return self.net['encoder'](states)

    def decode(self, code: torch.Tensor) -> torch.Tensor:
        """D(z) for one code vector or a batch of them."""
        if code.shape[-1] != self.codebook.d_z:
            raise ContractViolation(f"code size {code.shape[-1]} != {self.codebook.d_z}")
        return self.net['decoder'](code)

    def decode_index(self, indices: torch.Tensor) -> torch.Tensor:
        return self.decode(self.codebook.codes[indices])

    def quantize(self, embedding: torch.Tensor):
        return quantize(self.codebook, embedding)

    def vq_forward(self, states: torch.Tensor) -> VQOutput:
        """Reconstruction plus commitment loss; codes get no gradient."""
        if states.dim() != 2 or states.shape[0] == 0:
            raise ContractViolation(f"vq_forward needs a nonempty (B, D_h) batch, got {tuple(states.shape)}")
        z_e = self.encode(states)
        indices, z_q = quantize(self.codebook, z_e)
        z_q = z_q.detach()
        z_st = z_e + (z_q - z_e).detach()
        recon = self.decode(z_st)
        recon_loss = (states - recon).square().sum(dim=-1).mean()
        commit_loss = (z_q - z_e).square().sum(dim=-1).mean()
        loss = recon_loss + self.beta * commit_loss
        check_finite(loss.detach(), 'vq_forward')
        return VQOutput(recon, indices, loss, z_e)

    def train_step(self, states: torch.Tensor, rng: torch.Generator) -> Dict[str, float]:
        """One gradient step, one EMA update and, every M batches, code resampling."""
        out = self.vq_forward(states.detach())
        grads = clip_grad_norm(backward(out.loss, self.params.named()), self.grad_clip)
        adam_step(self.params, grads)
        ema_update(self.codebook, out.embeddings, out.indices, self.cfg.decay, self.cfg.eps)
        self.batches += 1

        resampled: List[int] = []
        if self.resampling and self.batches % self.M == 0:
            resampled = resample_codes(self.codebook, out.embeddings, rng, self.M)
        return {
            'vq_loss':         float(out.loss),
            'active_fraction': active_fraction(self.codebook, self.M),
            'resampled':       float(len(resampled)),
        }

    # ------------------------------------------------------------------
    # Checkpoint state
    # ------------------------------------------------------------------

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        out = self.params.state_tensors('vq/')
        out.update(self.codebook.state_tensors())
        out['codebook/batches'] = torch.tensor([float(self.batches)], dtype=DTYPE)
        return out

    def load_state_tensors(self, tensors: Dict[str, torch.Tensor]) -> None:
        self.params.load_state_tensors(tensors, 'vq/')
        self.codebook.load_state_tensors(tensors)
        self.batches = int(tensors['codebook/batches'].reshape(-1)[0])


# ---------------------------------------------------------------------------
# Diagnostics export
# ---------------------------------------------------------------------------

def export_codebook_json(vq: SkillVQ, path: str, targets: bool = False) -> dict:
    """
    Write ``{version, N, d_z, codes, active_mask}``; ``targets=True`` adds the
    decoded model state of every code under ``decoded``.
    """
    cb = vq.codebook
    doc = {
        'version':     EXPORT_VERSION,
        'N':           cb.N,
        'd_z':         cb.d_z,
        'codes':       cb.codes.tolist(),
        'active_mask': cb.active_mask(vq.M).tolist(),
    }
    if targets:
        with torch.no_grad():
            doc['decoded'] = vq.decode(cb.codes).tolist()
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, indent=2)
    logger.info(f"codebook exported to {path} (N={cb.N}, active={int(np.sum(doc['active_mask']))})")
    return doc


def load_codebook_json(path: str) -> Tuple[Codebook, np.ndarray]:
    """Read an export back into a Codebook plus its active mask."""
    with open(path, encoding='utf-8') as f:
        doc = json.load(f)
    if doc.get('version') != EXPORT_VERSION:
        raise CheckpointError('version', f"{doc.get('version')} is not supported (expected {EXPORT_VERSION})")
    codes = torch.tensor(doc['codes'], dtype=DTYPE)
    if tuple(codes.shape) != (doc['N'], doc['d_z']):
        raise CheckpointError('codes', f"shape {tuple(codes.shape)} != ({doc['N']}, {doc['d_z']})")
    return Codebook(codes), np.asarray(doc['active_mask'], dtype=bool)
