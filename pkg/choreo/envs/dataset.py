"""
Offline episode datasets as JSON lines.

    {"format": "choreo-episodes", "version": 1}
    {"obs": [[...], ...], "act": [[...], ...], "rew": [...], "meta": {...}}
    ...

The header line is optional on read and always written.  ``rew`` and
``meta`` are optional; absent rewards load as zeros.  Record numbers in
errors count episodes from 0, header excluded.
"""

import json
import logging
import os
from typing import Optional

import numpy as np
import torch

from choreo.envs.point_mass import PointMassEnv
from choreo.envs.replay import ReplayBuffer
from choreo.errors import DatasetParseError

logger = logging.getLogger(__name__)

DATASET_FORMAT  = 'choreo-episodes'
DATASET_VERSION = 1


def _matrix(record: int, name: str, value) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetParseError(record, name, f"not numeric ({exc})") from exc
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DatasetParseError(record, name, f"expected a nonempty list of vectors, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DatasetParseError(record, name, "non-finite value")
    return arr


def load_offline_dataset(path: str, capacity: int = 1_000_000) -> ReplayBuffer:
    """
    Read a dataset file into a new buffer.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        DatasetParseError: a record violates the episode schema.
    """
    buffer = ReplayBuffer(capacity=capacity)
    record = 0
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(record, 'json', f"line {lineno + 1}: {exc}") from exc
            if not isinstance(doc, dict):
                raise DatasetParseError(record, 'record', "expected a JSON object")

            if 'format' in doc:
                if doc['format'] != DATASET_FORMAT:
                    raise DatasetParseError(record, 'format', f"unknown format '{doc['format']}'")
                if doc.get('version') != DATASET_VERSION:
                    raise DatasetParseError(
                        record, 'version', f"{doc.get('version')} is not supported (expected {DATASET_VERSION})"
                    )
                continue

            for name in ('obs', 'act'):
                if name not in doc:
                    raise DatasetParseError(record, name, "missing")
            obs = _matrix(record, 'obs', doc['obs'])
            act = _matrix(record, 'act', doc['act'])
            if act.shape[0] != obs.shape[0]:
                raise DatasetParseError(record, 'act', f"length {act.shape[0]} != obs length {obs.shape[0]}")
            if buffer.obs_dim is not None and obs.shape[1] != buffer.obs_dim:
                raise DatasetParseError(record, 'obs', f"size {obs.shape[1]} != {buffer.obs_dim}")
            if buffer.act_dim is not None and act.shape[1] != buffer.act_dim:
                raise DatasetParseError(record, 'act', f"size {act.shape[1]} != {buffer.act_dim}")

            rew = None
            if doc.get('rew') is not None:
                try:
                    rew = np.asarray(doc['rew'], dtype=np.float64).reshape(-1)
                except (TypeError, ValueError) as exc:
                    raise DatasetParseError(record, 'rew', f"not numeric ({exc})") from exc
                if rew.shape[0] != obs.shape[0]:
                    raise DatasetParseError(record, 'rew', f"length {rew.shape[0]} != obs length {obs.shape[0]}")
            meta = doc.get('meta', {})
            if not isinstance(meta, dict):
                raise DatasetParseError(record, 'meta', "expected an object")
            buffer.add_episode(obs, act, rew, meta)
            record += 1

    logger.info(f"dataset {path}: {len(buffer)} episodes, {buffer.total_steps} steps")
    return buffer


def save_offline_dataset(buffer: ReplayBuffer, path: str, rewards: bool = True) -> None:
    """Write every episode of ``buffer``; ``rewards=False`` drops the reward column."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = path + '.tmp'
    with open(tmp_path, 'w', encoding='utf-8') as f:
        f.write(json.dumps({'format': DATASET_FORMAT, 'version': DATASET_VERSION}) + '\n')
        for ep in buffer:
            doc = {'obs': ep.obs.tolist(), 'act': ep.act.tolist()}
            if rewards:
                doc['rew'] = ep.rew.tolist()
            if ep.meta:
                doc['meta'] = ep.meta
            f.write(json.dumps(doc) + '\n')
    os.replace(tmp_path, path)
    logger.debug(f"dataset written: {path} ({len(buffer)} episodes)")


def collect_random_dataset(
    env: PointMassEnv,
    steps: int,
    rng: torch.Generator,
    noise: float = 0.3,
    capacity: Optional[int] = None,
) -> ReplayBuffer:
    """
    Run a scripted random-walk policy for ``steps`` environment steps.

    Actions follow ``a <- clip(a + noise * N(0, 1), -1, 1)`` and are reset to
    zero at each episode start.  Only whole episodes are stored.
    """
    buffer = ReplayBuffer(env.obs_dim, env.action_dim, capacity or max(steps, 1) * 2)
    taken = 0
    while taken < steps:
        obs_seq = [env.reset()]
        act_seq = [np.zeros(env.action_dim)]
        rew_seq = [0.0]
        action = np.zeros(env.action_dim)
        done = False
        while not done:
            step_noise = torch.randn(env.action_dim, generator=rng, dtype=torch.float64).numpy()
            action = np.clip(action + noise * step_noise, -1.0, 1.0)
            obs, reward, done = env.step(action)
            obs_seq.append(obs)
            act_seq.append(action.copy())
            rew_seq.append(reward)
            taken += 1
        buffer.add_episode(np.stack(obs_seq), np.stack(act_seq), np.asarray(rew_seq),
                           {'policy': 'random_walk'})
    return buffer
