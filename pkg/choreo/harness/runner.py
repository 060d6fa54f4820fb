"""
Phase runners: unsupervised pretraining and supervised fine-tuning.

Pretraining (per environment step, online mode):
  1. act with the exploration policy (uniform random during prefill)
  2. store the transition; environment rewards are not stored
  3. every ``train_every`` steps update world model, skill autoencoder,
     skill policies and exploration policy

Offline mode skips 1-2 and runs ``pretrain_steps`` updates on the dataset.

Fine-tuning resets the replay buffer, creates the reward head and the
meta-controller, acts with meta-controller + skills and updates the world
model (with reward head), the meta-controller and the skill actors.

Each runner owns its output directory through ``run.lock``.  Checkpoints
are written at episode boundaries (online) or every ``checkpoint_every``
updates (offline) together with the generator state, counters and the
number of metric records, so ``resume=True`` continues identically.
"""

import logging
import os
import signal
import threading
from typing import Dict, List, Optional

import numpy as np
import torch

from choreo.adaptation.meta import select_skill
from choreo.config.config import RunConfig
from choreo.envs.dataset import load_offline_dataset, save_offline_dataset
from choreo.envs.point_mass import PointMassEnv
from choreo.envs.replay import ReplayBuffer
from choreo.errors import ConfigError, NotReadyError, RunLockedError
from choreo.harness.agent import (
    REPLAY_FILE,
    ChoreoAgent,
    load_progress,
    save_progress,
)
from choreo.harness.metrics import JsonlMetricsSink, MetricsSink
from choreo.substrate.core import make_generator
from choreo.world_model.filter import LatentFilter

logger = logging.getLogger(__name__)

LOCK_FILE    = 'run.lock'
METRICS_FILE = 'metrics.jsonl'
FINAL_WINDOW = 20


def configure_determinism() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


# ---------------------------------------------------------------------------
# Output directory lock
# ---------------------------------------------------------------------------

def _lock_owner(path: str) -> Optional[int]:
    """PID recorded in a lock file, or None when it cannot be read."""
    try:
        with open(path, encoding='utf-8') as f:
            return int(f.read().strip())
    except (OSError, ValueError):
        return None


def _process_alive(pid: int) -> bool:
    if pid <= 0:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def acquire_lock(directory: str) -> str:
    """
    Create ``run.lock`` exclusively and record our PID in it.

    A lock left by a process that no longer exists (a run killed before it
    could clean up) is reclaimed with a warning.

    Raises:
        RunLockedError: the lock belongs to a live process or has no readable PID.
    """
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, LOCK_FILE)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        owner = _lock_owner(path)
        if owner is None or owner == os.getpid() or _process_alive(owner):
            raise RunLockedError(f"{directory} is locked by another run ({path})") from exc
        logger.warning(f"reclaiming stale lock {path} left by dead process {owner}")
        os.unlink(path)
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as race:
            raise RunLockedError(f"{directory} is locked by another run ({path})") from race
    with os.fdopen(fd, 'w') as f:
        f.write(f"{os.getpid()}\n")
    return path


def release_lock(path: Optional[str]) -> None:
    if path and os.path.exists(path):
        os.unlink(path)


# ---------------------------------------------------------------------------
# Runner base
# ---------------------------------------------------------------------------

class _PhaseRunner:
    """
    start() -> _setup() -> _run_loop() -> _cleanup().

    SIGINT/SIGTERM stop the loop at the next step; the run is checkpointed
    on the way out so it can be resumed.
    """

    phase = ''

    def __init__(self, cfg: RunConfig, sink: Optional[MetricsSink] = None, resume: bool = False):
        self.cfg       = cfg
        self.out_dir   = cfg.run.output_dir
        self.resume    = resume
        self.rng       = make_generator(cfg.run.seed)
        self.sink      = sink
        self._own_sink = sink is None
        self._running  = False
        self._lock     = None
        self._previous_handlers = {}

        self.agent: Optional[ChoreoAgent] = None
        self.buffer: Optional[ReplayBuffer] = None
        self.env: Optional[PointMassEnv] = None
        self.env_steps = 0
        self.updates   = 0
        self.episodes  = 0
        self.last_checkpoint_updates = 0

    def start(self) -> Dict[str, object]:
        logger.info(f"choreo-{self.phase}: starting (output={self.out_dir}, seed={self.cfg.run.seed})")
        self.cfg.validate()
        configure_determinism()
        self._lock = acquire_lock(self.out_dir)
        try:
            progress = load_progress(self.out_dir) if self.resume else None
            if self.sink is None:
                keep = progress['metrics_lines'] if progress else None
                self.sink = JsonlMetricsSink(os.path.join(self.out_dir, METRICS_FILE), keep_lines=keep)
            self._setup(progress)
            self._install_signal_handlers()
            self._running = True
            self._run_loop()
            self._checkpoint(final=True)
            return self._result()
        finally:
            self._cleanup()

    def _setup(self, progress: Optional[dict]) -> None:
        raise NotImplementedError

    def _run_loop(self) -> None:
        raise NotImplementedError

    def _result(self) -> Dict[str, object]:
        return {
            'output_dir': self.out_dir,
            'env_steps':  self.env_steps,
            'updates':    self.updates,
            'episodes':   self.episodes,
        }

    # ------------------------------------------------------------------

    def _restore_counters(self, progress: dict) -> None:
        self.env_steps = progress['env_steps']
        self.updates   = progress['updates']
        self.episodes  = progress['episodes']
        self.last_checkpoint_updates = progress['updates']
        logger.info(f"choreo-{self.phase}: resuming at update {self.updates}, env step {self.env_steps}")

    def _maybe_checkpoint(self) -> None:
        if self.updates - self.last_checkpoint_updates >= self.cfg.run.checkpoint_every:
            self._checkpoint()

    def _checkpoint(self, final: bool = False) -> None:
        self.agent.save(self.out_dir, self.rng)
        if self.env is not None:
            save_offline_dataset(self.buffer, os.path.join(self.out_dir, REPLAY_FILE))
        if isinstance(self.sink, JsonlMetricsSink):
            self.sink.flush()
        save_progress(self.out_dir, {
            'phase':         self.phase,
            'env_steps':     self.env_steps,
            'updates':       self.updates,
            'episodes':      self.episodes,
            'metrics_lines': getattr(self.sink, 'lines', 0),
            'complete':      final,
        })
        self.last_checkpoint_updates = self.updates

    def _maybe_snapshot(self) -> None:
        every = self.cfg.run.snapshot_every
        if every and self.updates % every == 0:
            self.agent.save(os.path.join(self.out_dir, 'snapshots', f'step_{self.updates}'))

    def _restore_buffer(self, capacity: int) -> ReplayBuffer:
        path = os.path.join(self.out_dir, REPLAY_FILE)
        if self.resume and os.path.exists(path):
            return load_offline_dataset(path, capacity=capacity)
        return ReplayBuffer(self.env.obs_dim, self.env.action_dim, capacity)

    def _random_action(self) -> np.ndarray:
        return (torch.rand(self.env.action_dim, generator=self.rng, dtype=torch.float64) * 2.0 - 1.0).numpy()

    # ------------------------------------------------------------------

    def _install_signal_handlers(self) -> None:
        if threading.current_thread() is not threading.main_thread():
            return
        for signum in (signal.SIGINT, signal.SIGTERM):
            self._previous_handlers[signum] = signal.signal(signum, self._handle_signal)

    def _handle_signal(self, signum, frame):
        logger.info(f"choreo-{self.phase}: received signal {signum}, stopping after this step")
        self._running = False

    def _cleanup(self) -> None:
        for signum, handler in self._previous_handlers.items():
            try:
                signal.signal(signum, handler)
            except (ValueError, TypeError):
                pass
        self._previous_handlers = {}
        if self._own_sink and self.sink is not None:
            self.sink.close()
        release_lock(self._lock)
        self._lock = None
        logger.info(f"choreo-{self.phase}: stopped")


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------

class PretrainRunner(_PhaseRunner):
    phase = 'pretrain'

    def _setup(self, progress: Optional[dict]) -> None:
        run = self.cfg.run
        if run.mode == 'offline':
            if not os.path.exists(run.dataset_path):
                raise ConfigError('run.dataset_path', f"dataset {run.dataset_path!r} not found")
            self.buffer = load_offline_dataset(run.dataset_path)
            if self.buffer.obs_dim is None:
                raise ConfigError('run.dataset_path', "dataset holds no episodes")
            # no more data arrives offline; without a window the update loop never advances
            seq_len = self.cfg.model.seq_len
            if int(self.buffer.window_counts(seq_len).sum()) == 0:
                longest = max(len(ep) for ep in self.buffer)
                raise ConfigError(
                    'run.dataset_path',
                    f"no episode spans model.seq_len={seq_len} steps (longest has {longest})",
                )
            self.agent = ChoreoAgent(self.cfg, self.buffer.obs_dim, self.buffer.act_dim, self.rng)
        else:
            self.env = PointMassEnv(self.cfg.env)
            self.agent = ChoreoAgent(self.cfg, self.env.obs_dim, self.env.action_dim, self.rng, explore=True)
            self.buffer = self._restore_buffer(max(run.pretrain_steps, 1) + self.cfg.env.max_steps + 1)
        if progress:
            self.agent.load(self.out_dir, self.rng)
            self._restore_counters(progress)

    def _run_loop(self) -> None:
        budget = self.cfg.run.pretrain_steps
        if self.env is None:
            while self._running and self.updates < budget:
                self._update()
                self._maybe_checkpoint()
        else:
            while self._running and self.env_steps < budget:
                self._episode(budget)
                self._maybe_checkpoint()

    def _episode(self, budget: int) -> None:
        run = self.cfg.run
        env, explorer = self.env, self.agent.explorer
        latent = LatentFilter(self.agent.wm)
        obs = env.reset()
        state = latent.reset(obs, self.rng)
        obs_seq, act_seq = [obs], [np.zeros(env.action_dim)]
        done = False
        while not done and self.env_steps < budget and self._running:
            if self.env_steps < run.prefill_steps:
                action = self._random_action()
            else:
                action = explorer.act(state, self.rng).reshape(-1).numpy()
            obs, _, done = env.step(action)
            state = latent.step(action, obs, self.rng)
            obs_seq.append(obs)
            act_seq.append(action)
            self.env_steps += 1
            if self.env_steps % run.train_every == 0 and self.env_steps >= run.prefill_steps:
                self._update()
        self.buffer.add_episode(np.stack(obs_seq), np.stack(act_seq), None, {'phase': self.phase})
        self.episodes += 1

    def _update(self) -> None:
        m = self.cfg.model
        try:
            batch = self.buffer.sample_batch(m.batch_size, m.seq_len, self.rng)
        except NotReadyError as exc:
            logger.debug(f"choreo-pretrain: skipping update ({exc})")
            return
        metrics = self.agent.pretrain_update(batch, self.rng)
        self.updates += 1
        self.sink.write_many(self.updates, self.phase, metrics)
        if self.updates % self.cfg.bench.log_every == 0:
            logger.info(
                f"choreo-pretrain: update {self.updates} wm_loss={metrics['wm_loss']:.4f} "
                f"vq_loss={metrics['vq_loss']:.4f} active={metrics['active_fraction']:.2f}"
            )
        self._maybe_snapshot()


def run_pretrain(cfg: RunConfig, sink: Optional[MetricsSink] = None, resume: bool = False) -> Dict[str, object]:
    """Unsupervised phase; returns counters and the output directory."""
    return PretrainRunner(cfg, sink, resume).start()


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------

class FinetuneRunner(_PhaseRunner):
    phase = 'finetune'

    def __init__(self, cfg: RunConfig, pretrained_dir: str, sink: Optional[MetricsSink] = None,
                 resume: bool = False):
        super().__init__(cfg, sink, resume)
        self.pretrained_dir = pretrained_dir
        self.returns: List[float] = []
        self.successes: List[bool] = []

    def _setup(self, progress: Optional[dict]) -> None:
        self.env = PointMassEnv(self.cfg.env)
        self.agent = ChoreoAgent(self.cfg, self.env.obs_dim, self.env.action_dim, self.rng)
        if progress:
            self.agent.load(self.out_dir, self.rng)
            self._restore_counters(progress)
            self.returns = progress.get('returns', [])
            self.successes = progress.get('successes', [])
        else:
            self.agent.load(self.pretrained_dir)
            self.agent.start_finetune(self.rng)
        self.buffer = self._restore_buffer(max(self.cfg.run.finetune_steps, 1) + self.cfg.env.max_steps + 1)

    def _checkpoint(self, final: bool = False) -> None:
        super()._checkpoint(final)
        progress = load_progress(self.out_dir)
        progress['returns'] = self.returns
        progress['successes'] = self.successes
        save_progress(self.out_dir, progress)

    def _run_loop(self) -> None:
        budget = self.cfg.run.finetune_steps
        while self._running and self.env_steps < budget:
            self._episode(budget)
            self._maybe_checkpoint()

    def _episode(self, budget: int) -> None:
        run = self.cfg.run
        env, meta, skills, codes = self.env, self.agent.meta, self.agent.skills, self.agent.vq.codebook.codes
        meta.begin_episode()
        latent = LatentFilter(self.agent.wm)
        obs = env.reset()
        state = latent.reset(obs, self.rng)
        obs_seq, act_seq, rew_seq = [obs], [np.zeros(env.action_dim)], [0.0]
        chosen: List[int] = []
        total, done = 0.0, False
        while not done and self.env_steps < budget and self._running:
            z = select_skill(meta, state, self.rng, mode='sample')
            action = skills.act(state.deter, codes[z].unsqueeze(0), self.rng).reshape(-1).numpy()
            obs, reward, done = env.step(action)
            meta.smoother.observe(reward)
            state = latent.step(action, obs, self.rng)
            obs_seq.append(obs)
            act_seq.append(action)
            rew_seq.append(reward)
            chosen.append(z)
            total += reward
            self.env_steps += 1
            if self.env_steps % run.train_every == 0:
                self._update()

        self.buffer.add_episode(np.stack(obs_seq), np.stack(act_seq), np.asarray(rew_seq), {'phase': self.phase})
        self.episodes += 1
        self.returns.append(total)
        self.successes.append(bool(env.success))
        histogram = np.bincount(np.asarray(chosen, dtype=np.int64), minlength=self.agent.vq.N)
        self.sink.write_record({
            'step':            self.env_steps,
            'phase':           self.phase,
            'return':          total,
            'success':         bool(env.success),
            'skill_histogram': histogram.tolist(),
        })
        logger.info(
            f"choreo-finetune: episode {self.episodes} return={total:.1f} "
            f"success={env.success} armed={meta.smoother.armed}"
        )

    def _update(self) -> None:
        m = self.cfg.model
        try:
            batch = self.buffer.sample_batch(m.batch_size, m.seq_len, self.rng)
        except NotReadyError as exc:
            logger.debug(f"choreo-finetune: skipping update ({exc})")
            return
        metrics = self.agent.finetune_update(batch, self.rng, self.cfg.run.freeze_skills)
        self.updates += 1
        self.sink.write_many(self.updates, self.phase, metrics)
        self._maybe_snapshot()

    def _result(self) -> Dict[str, object]:
        result = super()._result()
        tail = self.successes[-FINAL_WINDOW:]
        result.update({
            'returns':       list(self.returns),
            'successes':     list(self.successes),
            'final_success': float(np.mean(tail)) if tail else None,
            'final_return':  float(np.mean(self.returns[-FINAL_WINDOW:])) if self.returns else None,
        })
        return result


def run_finetune(
    cfg: RunConfig,
    pretrained_dir: str,
    sink: Optional[MetricsSink] = None,
    resume: bool = False,
) -> Dict[str, object]:
    """Supervised phase starting from the checkpoint in ``pretrained_dir``."""
    return FinetuneRunner(cfg, pretrained_dir, sink, resume).start()
