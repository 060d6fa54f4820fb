"""
Codebook-resampling benchmark on a synthetic Gaussian mixture.

For every seed the skill autoencoder is trained twice on the same stream of
batches, once with code resampling and once without.  Mixture data comes
from a generator seeded with ``seed``; model initialisation and resampling
draws from a second generator seeded with ``seed + 1``, so both runs see
identical data and identical initial weights.

The unused-code fraction is measured on a held-out sample of the mixture:
a code is unused when no held-out point is assigned to it.
"""

import dataclasses
import logging
from typing import Dict, List, Optional

import numpy as np
import torch

from choreo.config.config import RunConfig
from choreo.harness.metrics import MetricsSink
from choreo.skills.codebook import SkillVQ, assignment_histogram
from choreo.substrate.core import DTYPE, make_generator

logger = logging.getLogger(__name__)

EVAL_SAMPLES = 4096


class GaussianMixture:
    """``modes`` isotropic Gaussians with centres uniform in [-1, 1]^dim."""

    def __init__(self, modes: int, dim: int, spread: float, rng: torch.Generator):
        self.modes  = modes
        self.dim    = dim
        self.spread = spread
        self.centres = torch.rand(modes, dim, generator=rng, dtype=DTYPE) * 2.0 - 1.0

    def sample(self, n: int, rng: torch.Generator) -> torch.Tensor:
        labels = torch.randint(self.modes, (n,), generator=rng)
        noise = torch.randn(n, self.dim, generator=rng, dtype=DTYPE)
        return self.centres[labels] + self.spread * noise


def unused_fraction(vq: SkillVQ, eval_states: torch.Tensor) -> float:
    with torch.no_grad():
        indices, _ = vq.quantize(vq.encode(eval_states))
    histogram = assignment_histogram(indices, vq.N)
    return float((histogram == 0).sum()) / vq.N


def train_codebook(
    cfg: RunConfig,
    seed: int,
    resampling: bool,
    period: Optional[int] = None,
    sink: Optional[MetricsSink] = None,
    tag: str = '',
) -> Dict[str, object]:
    """One paired training run; returns its curve and final statistics."""
    bench = cfg.bench
    cb_cfg = dataclasses.replace(cfg.codebook, resampling=resampling)
    if period is not None:
        cb_cfg = dataclasses.replace(cb_cfg, resample_every=period)

    data_rng = make_generator(seed)
    model_rng = make_generator(seed + 1)
    mixture = GaussianMixture(bench.modes, bench.state_dim, bench.spread, data_rng)
    eval_states = mixture.sample(EVAL_SAMPLES, data_rng)
    vq = SkillVQ(bench.state_dim, cb_cfg, model_rng, grad_clip=cfg.model.grad_clip)

    curve: List[Dict[str, float]] = []
    losses: List[float] = []
    for batch in range(1, bench.batches + 1):
        metrics = vq.train_step(mixture.sample(bench.batch_size, data_rng), model_rng)
        losses.append(metrics['vq_loss'])
        if batch % bench.log_every == 0 or batch == bench.batches:
            point = {
                'batch':           batch,
                'vq_loss':         metrics['vq_loss'],
                'active_fraction': 1.0 - unused_fraction(vq, eval_states),
            }
            curve.append(point)
            if sink is not None:
                sink.write(batch, f'bench/{tag}', 'active_fraction', point['active_fraction'])
                sink.write(batch, f'bench/{tag}', 'vq_loss', point['vq_loss'])

    with torch.no_grad():
        indices, _ = vq.quantize(vq.encode(eval_states))
    histogram = assignment_histogram(indices, vq.N)
    tail = losses[-bench.log_every:] if losses else []
    return {
        'seed':            seed,
        'resampling':      resampling,
        'period':          cb_cfg.resample_every,
        'curve':           curve,
        'final_loss':      float(np.mean(tail)) if tail else None,
        'unused_fraction': float((histogram == 0).sum()) / vq.N,
        'histogram':       histogram.tolist(),
    }


def run_codebook_bench(cfg: RunConfig, sink: Optional[MetricsSink] = None) -> Dict[str, object]:
    """
    Paired with/without-resampling runs for every seed in ``bench.seeds``,
    then a sweep over ``bench.periods`` with resampling on.

    Returns a report with per-seed runs and their means.
    """
    cfg.validate()
    runs = []
    for seed in cfg.bench.seeds:
        with_cr = train_codebook(cfg, seed, True, sink=sink, tag=f'cr/seed_{seed}')
        without_cr = train_codebook(cfg, seed, False, sink=sink, tag=f'no_cr/seed_{seed}')
        logger.info(
            f"bench seed {seed}: unused {with_cr['unused_fraction']:.3f} with resampling, "
            f"{without_cr['unused_fraction']:.3f} without"
        )
        runs.append({'seed': seed, 'resampling': with_cr, 'no_resampling': without_cr})

    sweep = []
    for period in cfg.bench.periods:
        results = [train_codebook(cfg, seed, True, period=period, sink=sink, tag=f'period_{period}/seed_{seed}')
                   for seed in cfg.bench.seeds]
        sweep.append({
            'period':          period,
            'final_loss':      float(np.mean([r['final_loss'] for r in results])),
            'unused_fraction': float(np.mean([r['unused_fraction'] for r in results])),
        })
        logger.info(f"bench period {period}: {sweep[-1]}")

    def mean_of(key: str, field: str) -> Optional[float]:
        values = [run[key][field] for run in runs]
        return float(np.mean(values)) if values else None

    return {
        'runs':  runs,
        'sweep': sweep,
        'summary': {
            'unused_with_resampling':    mean_of('resampling', 'unused_fraction'),
            'unused_without_resampling': mean_of('no_resampling', 'unused_fraction'),
            'loss_with_resampling':      mean_of('resampling', 'final_loss'),
            'loss_without_resampling':   mean_of('no_resampling', 'final_loss'),
        },
    }
