"""
Run configuration for choreo.

``RunConfig`` is composed of one dataclass per section.  Each section has
defaults, ``from_dict()`` and ``to_dict()``; ``RunConfig.load()`` deep-merges
a file over the defaults and falls back to the defaults when the file is
missing.

Two file formats are understood:

  *.json   nested sections, like the repository-root config.json
  other    flat ``section.key=value`` lines, ``#`` starts a comment

Precedence: CLI ``--set`` overrides > file > defaults.  The CHOREO_SEED
environment variable overrides ``run.seed``.
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from choreo.errors import ConfigError

logger = logging.getLogger(__name__)

SEED_ENV_VAR = 'CHOREO_SEED'


class _Section:
    """Mixin giving section dataclasses dict round-tripping."""

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            logger.warning(f"{cls.__name__}: ignoring unknown keys {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunSection(_Section):
    seed:             int = 0
    mode:             str = 'online'      # online | offline
    dataset_path:     str = ''
    output_dir:       str = 'runs/default'
    pretrain_steps:   int = 50000         # env steps (online) or gradient steps (offline)
    finetune_steps:   int = 10000
    train_every:      int = 10
    prefill_steps:    int = 1000
    checkpoint_every: int = 500           # updates between resumable checkpoints
    snapshot_every:   int = 0             # updates between kept snapshots; 0 disables
    freeze_skills:    bool = False
    log_level:        str = 'INFO'


@dataclass
class ModelConfig(_Section):
    deter:      int = 64
    groups:     int = 8
    classes:    int = 8
    hidden:     int = 128
    layers:     int = 2
    lr:         float = 3e-4
    grad_clip:  float = 100.0
    batch_size: int = 16
    seq_len:    int = 16


@dataclass
class CodebookConfig(_Section):
    num_codes:      int = 64
    code_dim:       int = 16
    resample_every: int = 200
    beta:           float = 0.25
    decay:          float = 0.99
    eps:            float = 1e-5
    hidden:         int = 128
    layers:         int = 2
    lr:             float = 3e-4
    resampling:     bool = True


@dataclass
class SkillConfig(_Section):
    knn_k:          int = 30
    horizon:        int = 15
    gamma:          float = 0.99
    lam:            float = 0.95
    actor_lr:       float = 8e-5
    critic_lr:      float = 8e-5
    actor_entropy:  float = 1e-4
    std_min:        float = 0.1
    std_max:        float = 1.0
    hidden:         int = 128
    layers:         int = 2
    grad_clip:      float = 100.0


@dataclass
class ExplorationConfig(_Section):
    reward_mode: str = 'imagined'   # imagined | replay


@dataclass
class MetaConfig(_Section):
    entropy_coef:       float = 1e-3
    skill_every:        int = 1
    smoother_threshold: float = 1e-4
    actor_lr:           float = 8e-5
    critic_lr:          float = 8e-5
    sweep_every:        int = 50


@dataclass
class EnvConfig(_Section):
    dt:          float = 0.1
    max_steps:   int = 200
    goal:        List[float] = field(default_factory=lambda: [0.7, 0.7])
    start:       List[float] = field(default_factory=lambda: [-0.7, -0.7])
    goal_radius: float = 0.1
    sparse:      bool = True
    layout:      str = 'open'       # open | two_room


@dataclass
class BenchConfig(_Section):
    modes:      int = 64
    state_dim:  int = 16
    batches:    int = 10000
    batch_size: int = 256
    spread:     float = 0.05
    seeds:      List[int] = field(default_factory=lambda: [0, 1, 2])
    periods:    List[int] = field(default_factory=list)
    log_every:  int = 100


_SECTIONS = {
    'run':         RunSection,
    'model':       ModelConfig,
    'codebook':    CodebookConfig,
    'skill':       SkillConfig,
    'exploration': ExplorationConfig,
    'meta':        MetaConfig,
    'env':         EnvConfig,
    'bench':       BenchConfig,
}


@dataclass
class RunConfig:
    """All hyperparameters of a run, grouped by the component that consumes them."""

    run:         RunSection = field(default_factory=RunSection)
    model:       ModelConfig = field(default_factory=ModelConfig)
    codebook:    CodebookConfig = field(default_factory=CodebookConfig)
    skill:       SkillConfig = field(default_factory=SkillConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    meta:        MetaConfig = field(default_factory=MetaConfig)
    env:         EnvConfig = field(default_factory=EnvConfig)
    bench:       BenchConfig = field(default_factory=BenchConfig)

    # ------------------------------------------------------------------
    # Dict round-trip
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in _SECTIONS}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> 'RunConfig':
        cfg = cls()
        for name, section_cls in _SECTIONS.items():
            merged = getattr(cfg, name).to_dict()
            merged.update(d.get(name, {}))
            setattr(cfg, name, section_cls.from_dict(merged))
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            logger.warning(f"RunConfig: ignoring unknown sections {sorted(unknown)}")
        return cfg

    # ------------------------------------------------------------------
    # Files
    # ------------------------------------------------------------------

    @classmethod
    def load(cls, path: Optional[str]) -> 'RunConfig':
        """Load ``path`` over the defaults; a missing file yields the defaults."""
        if not path:
            return cls()
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except FileNotFoundError:
            logger.warning(f"Config file {path} not found; using defaults")
            return cls()

        if path.endswith('.json'):
            try:
                return cls.from_dict(json.loads(text))
            except json.JSONDecodeError as exc:
                raise ConfigError(path, f"invalid JSON ({exc})") from exc
        cfg = cls()
        cfg.apply_overrides(parse_flat(text))
        return cfg

    def save(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            if path.endswith('.json'):
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
                f.write('\n')
            else:
                f.write(format_flat(self.to_dict()))

    # ------------------------------------------------------------------
    # Overrides
    # ------------------------------------------------------------------

    def apply_overrides(self, overrides: Mapping[str, Any]) -> 'RunConfig':
        """Apply ``{'section.key': value}`` pairs, coercing strings to the field type."""
        for dotted, raw in overrides.items():
            if '.' not in dotted:
                raise ConfigError(dotted, "expected 'section.key'")
            section_name, key = dotted.split('.', 1)
            if section_name not in _SECTIONS:
                raise ConfigError(dotted, f"unknown section '{section_name}'")
            section = getattr(self, section_name)
            fields = {f.name: f for f in dataclasses.fields(section)}
            if key not in fields:
                raise ConfigError(dotted, "unknown key")
            current = getattr(section, key)
            setattr(section, key, _coerce(dotted, raw, current))
        return self

    def apply_env(self, environ: Optional[Mapping[str, str]] = None) -> 'RunConfig':
        environ = os.environ if environ is None else environ
        if environ.get(SEED_ENV_VAR):
            self.run.seed = _coerce(SEED_ENV_VAR, environ[SEED_ENV_VAR], 0)
            logger.info(f"seed overridden by {SEED_ENV_VAR}={self.run.seed}")
        return self

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> 'RunConfig':
        r, m, c, s, e = self.run, self.model, self.codebook, self.skill, self.env
        checks = [
            ('run.mode',              r.mode in ('online', 'offline'), "must be online|offline"),
            ('run.pretrain_steps',    r.pretrain_steps >= 0, "must be >= 0"),
            ('run.finetune_steps',    r.finetune_steps >= 0, "must be >= 0"),
            ('run.prefill_steps',     r.prefill_steps >= 0, "must be >= 0"),
            ('run.train_every',       r.train_every >= 1, "must be >= 1"),
            ('run.checkpoint_every',  r.checkpoint_every >= 1, "must be >= 1"),
            ('run.snapshot_every',    r.snapshot_every >= 0, "must be >= 0"),
            ('run.dataset_path',      r.mode != 'offline' or bool(r.dataset_path),
             "required in offline mode"),
            ('model.seq_len',         m.seq_len >= 2, "must be >= 2"),
            ('model.batch_size',      m.batch_size >= 1, "must be >= 1"),
            ('model.grad_clip',       m.grad_clip > 0, "must be > 0"),
            ('codebook.num_codes',    c.num_codes >= 2, "must be >= 2"),
            ('codebook.code_dim',     c.code_dim >= 1, "must be >= 1"),
            ('codebook.resample_every', c.resample_every >= 1, "must be >= 1"),
            ('codebook.beta',         c.beta > 0, "must be > 0"),
            ('codebook.decay',        0 < c.decay < 1, "must be in (0, 1)"),
            ('skill.knn_k',           s.knn_k >= 1, "must be >= 1"),
            # imagined rollouts start from every (batch, time) posterior state
            ('skill.knn_k',           s.horizon == 0 or s.knn_k < m.batch_size * m.seq_len,
             f"must be < model.batch_size * model.seq_len = {m.batch_size * m.seq_len}"),
            ('skill.horizon',         s.horizon >= 0, "must be >= 0"),
            ('skill.gamma',           0 < s.gamma < 1, "must be in (0, 1)"),
            ('skill.lam',             0 <= s.lam <= 1, "must be in [0, 1]"),
            ('skill.std_min',         0 < s.std_min <= s.std_max, "must satisfy 0 < std_min <= std_max"),
            ('exploration.reward_mode', self.exploration.reward_mode in ('imagined', 'replay'),
             "must be imagined|replay"),
            ('meta.skill_every',      self.meta.skill_every >= 1, "must be >= 1"),
            ('meta.sweep_every',      self.meta.sweep_every >= 1, "must be >= 1"),
            ('env.layout',            e.layout in ('open', 'two_room'), "must be open|two_room"),
            ('env.goal',              len(e.goal) == 2, "must have 2 coordinates"),
            ('env.start',             len(e.start) == 2, "must have 2 coordinates"),
            ('env.dt',                e.dt > 0, "must be > 0"),
            ('env.max_steps',         e.max_steps >= 1, "must be >= 1"),
        ]
        for name, ok, reason in checks:
            if not ok:
                raise ConfigError(name, reason)
        return self


# ---------------------------------------------------------------------------
# Flat key-value format
# ---------------------------------------------------------------------------

def parse_flat(text: str) -> Dict[str, str]:
    """Parse ``section.key=value`` lines into a dict of raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"line {lineno}", "expected 'section.key=value'")
        key, value = line.split('=', 1)
        out[key.strip()] = value.strip()
    return out


def format_flat(d: Mapping[str, Mapping[str, Any]]) -> str:
    lines = []
    for section in d:
        for key, value in d[section].items():
            lines.append(f"{section}.{key}={json.dumps(value)}")
    return '\n'.join(lines) + '\n'


def _coerce(name: str, raw: Any, current: Any) -> Any:
    """Convert ``raw`` to the type of ``current``; JSON syntax is accepted for strings."""
    if not isinstance(raw, str):
        value = raw
    else:
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                if value.lower() not in ('true', 'false', '1', '0', 'yes', 'no'):
                    raise ValueError(value)
                return value.lower() in ('true', '1', 'yes')
            return bool(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, list):
            if not isinstance(value, list):
                raise ValueError(value)
            return list(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"cannot interpret {raw!r} as {type(current).__name__}") from exc
