#!/usr/bin/env python3
"""
choreo command-line entry point.

Usage:
    choreo pretrain --config run.json [--set codebook.num_codes=32] [--resume]
    choreo finetune --config run.json --pretrained runs/pre [--freeze-skills] [--resume]
    choreo eval --checkpoint runs/fine [--episodes 20]
    choreo bench-codebook --config bench.json
    choreo export-skills --checkpoint runs/pre --out skills.json
    choreo collect --out data.jsonl --steps 20000

Settings are resolved as ``--set`` > config file > defaults; CHOREO_SEED
overrides the seed after all three.

Exit codes:
    0 - Success
    1 - Invalid configuration
    2 - Unreadable dataset or checkpoint
    3 - Output directory locked by another run
    4 - Numeric fault or other run failure
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from choreo.config.config import RunConfig
from choreo.errors import (
    CheckpointError,
    ChoreoError,
    ConfigError,
    DatasetParseError,
    RunLockedError,
)
from choreo.harness.logging_setup import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK         = 0
EXIT_CONFIG     = 1
EXIT_INPUT      = 2
EXIT_LOCKED     = 3
EXIT_FAILURE    = 4


def _parse_set(pairs: List[str]) -> dict:
    overrides = {}
    for pair in pairs:
        if '=' not in pair:
            raise ConfigError(pair, "expected --set section.key=value")
        key, value = pair.split('=', 1)
        overrides[key.strip()] = value.strip()
    return overrides


def build_config(args) -> RunConfig:
    """Defaults, then the config file, then ``--set``, then CHOREO_SEED."""
    cfg = RunConfig.load(getattr(args, 'config', None))
    cfg.apply_overrides(_parse_set(getattr(args, 'set', None) or []))
    if getattr(args, 'output', None):
        cfg.run.output_dir = args.output
    if getattr(args, 'freeze_skills', False):
        cfg.run.freeze_skills = True
    cfg.apply_env()
    return cfg.validate()


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    from choreo.harness.runner import run_pretrain

    cfg = build_config(args)
    configure_logging(cfg.run.log_level, os.path.join(cfg.run.output_dir, 'choreo.log'))
    result = run_pretrain(cfg, resume=args.resume)
    _print_json(result)
    return EXIT_OK


def cmd_finetune(args) -> int:
    from choreo.harness.runner import run_finetune

    cfg = build_config(args)
    configure_logging(cfg.run.log_level, os.path.join(cfg.run.output_dir, 'choreo.log'))
    result = run_finetune(cfg, args.pretrained, resume=args.resume)
    _print_json({k: v for k, v in result.items() if k not in ('returns', 'successes')})
    return EXIT_OK


def cmd_eval(args) -> int:
    from choreo.adaptation.evaluation import random_policy_eval, skill_sweep_eval, zero_shot_eval
    from choreo.envs.point_mass import PointMassEnv
    from choreo.harness.agent import CONFIG_FILE, ChoreoAgent
    from choreo.substrate.core import make_generator

    cfg = RunConfig.load(os.path.join(args.checkpoint, CONFIG_FILE))
    cfg.apply_overrides(_parse_set(args.set or []))
    cfg.apply_env()
    cfg.validate()
    configure_logging(cfg.run.log_level)

    rng = make_generator(cfg.run.seed)
    env = PointMassEnv(cfg.env)
    agent = ChoreoAgent(cfg, env.obs_dim, env.action_dim, rng)
    agent.load(args.checkpoint, rng)

    report = {
        'skill_sweep': skill_sweep_eval(agent.skills, agent.wm, agent.vq, env, args.episodes, rng,
                                        sweep_every=cfg.meta.sweep_every),
        'random':      random_policy_eval(env, args.episodes, rng),
    }
    if agent.meta is not None:
        report['zero_shot'] = zero_shot_eval(agent.meta, agent.skills, agent.wm, agent.vq, env,
                                             args.episodes, rng)
    _print_json(report)
    return EXIT_OK


def cmd_bench(args) -> int:
    from choreo.harness.bench import run_codebook_bench
    from choreo.harness.metrics import JsonlMetricsSink

    cfg = build_config(args)
    configure_logging(cfg.run.log_level)
    os.makedirs(cfg.run.output_dir, exist_ok=True)
    with JsonlMetricsSink(os.path.join(cfg.run.output_dir, 'bench.jsonl')) as sink:
        report = run_codebook_bench(cfg, sink)
    with open(os.path.join(cfg.run.output_dir, 'bench_report.json'), 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2)
    _print_json(report['summary'])
    return EXIT_OK


def cmd_export(args) -> int:
    from choreo.harness.agent import CODEBOOK_FILE, CONFIG_FILE
    from choreo.skills.codebook import SkillVQ, export_codebook_json
    from choreo.substrate.checkpoint import load_checkpoint
    from choreo.substrate.core import make_generator

    cfg = RunConfig.load(os.path.join(args.checkpoint, CONFIG_FILE))
    configure_logging(cfg.run.log_level)
    vq = SkillVQ(cfg.model.deter, cfg.codebook, make_generator(cfg.run.seed), grad_clip=cfg.model.grad_clip)
    vq.load_state_tensors(load_checkpoint(os.path.join(args.checkpoint, CODEBOOK_FILE)))
    doc = export_codebook_json(vq, args.out, targets=not args.no_targets)
    _print_json({'path': args.out, 'N': doc['N'], 'active': int(sum(doc['active_mask']))})
    return EXIT_OK


def cmd_collect(args) -> int:
    from choreo.envs.dataset import collect_random_dataset, save_offline_dataset
    from choreo.envs.point_mass import PointMassEnv
    from choreo.substrate.core import make_generator

    cfg = build_config(args)
    configure_logging(cfg.run.log_level)
    env = PointMassEnv(cfg.env)
    buffer = collect_random_dataset(env, args.steps, make_generator(cfg.run.seed), noise=args.noise)
    save_offline_dataset(buffer, args.out)
    _print_json({'path': args.out, 'episodes': len(buffer), 'steps': buffer.total_steps})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='choreo',
        description='Skill discovery with a learned world model and a skill codebook',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest='command', required=True)

    def config_args(p, output=True):
        p.add_argument('--config', '-c', help='JSON or section.key=value config file')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                       help='Override one setting, e.g. codebook.num_codes=32 (repeatable)')
        if output:
            p.add_argument('--output', '-o', help='Output directory (run.output_dir)')

    p = sub.add_parser('pretrain', help='Unsupervised pretraining (online or offline)')
    config_args(p)
    p.add_argument('--resume', action='store_true', help='Continue from the last checkpoint')
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser('finetune', help='Adapt to the task reward with the meta-controller')
    config_args(p)
    p.add_argument('--pretrained', required=True, help='Pretraining checkpoint directory')
    p.add_argument('--freeze-skills', action='store_true', help='Keep skill actors fixed')
    p.add_argument('--resume', action='store_true', help='Continue from the last checkpoint')
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser('eval', help='Evaluate a checkpoint without updates')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--episodes', type=int, default=20)
    p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('bench-codebook', help='Code-resampling benchmark on synthetic data')
    config_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser('export-skills', help='Write the skill codebook as JSON')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--no-targets', action='store_true', help='Omit decoded model states')
    p.set_defaults(func=cmd_export)

    p = sub.add_parser('collect', help='Write a random-walk offline dataset')
    config_args(p, output=False)
    p.add_argument('--out', required=True)
    p.add_argument('--steps', type=int, default=20000)
    p.add_argument('--noise', type=float, default=0.3)
    p.set_defaults(func=cmd_collect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except (DatasetParseError, CheckpointError, FileNotFoundError) as e:
        logger.error(f"Cannot read input: {e}")
        return EXIT_INPUT
    except RunLockedError as e:
        logger.error(str(e))
        return EXIT_LOCKED
    except ChoreoError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_FAILURE
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
