"""Model and training configuration.

Config files are flat `key = value` text; every problem found is reported
together in one ConfigError.
"""
import logging
from dataclasses import dataclass, field, asdict, fields, replace

from utils import ConfigError, read_key_values

logger = logging.getLogger(__name__)

DESK_DEFAULTS = {
    'd_emb': 32,
    'd_hidden': 64,
    'vocab_size': 1000,
    'batch_size': 4,
    'beam': 5,
    'max_sentence_length': 40,
}

ENCODERS = ('tree', 'sequential')
RARE_WORD_MODES = ('tree', 'sequential', 'none')


@dataclass(frozen=True)
class BetaMode:
    kind: str  # 'fixed' | 'gating' | 'unweighted'
    value: float = 0.0

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text in ('gating', 'unweighted'):
            return cls(text)
        if text.startswith('fixed:'):
            try:
                value = float(text[len('fixed:'):])
            except ValueError:
                raise ValueError(f'bad beta mode {text!r}') from None
            if not 0.0 <= value <= 1.0:
                raise ValueError(f'fixed beta must lie in [0, 1], got {value}')
            return cls('fixed', value)
        raise ValueError(f'unknown beta mode {text!r} (use fixed:<x>, gating or unweighted)')

    def __str__(self):
        return f'fixed:{self.value}' if self.kind == 'fixed' else self.kind


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = DESK_DEFAULTS['d_emb']
    d_hidden: int = DESK_DEFAULTS['d_hidden']
    d_att: int = 0      # 0 means d_hidden
    d_comp: int = 0     # 0 means d_hidden
    beta_mode: BetaMode = BetaMode('gating')
    encoder: str = 'tree'
    backward_leaf: bool = True
    top_down: bool = True
    attend_eos: bool = True
    rare_words: str = 'tree'

    @property
    def att_dim(self):
        return self.d_att or self.d_hidden

    @property
    def comp_dim(self):
        return self.d_comp or self.d_hidden

    @property
    def leaf_dim(self):
        """State size of each directional leaf GRU."""
        return self.d_hidden // 2 if self.backward_leaf else self.d_hidden

    @property
    def uses_tree(self):
        return self.encoder == 'tree'

    def problems(self):
        out = []
        for name in ('d_emb', 'd_hidden'):
            if getattr(self, name) < 1:
                out.append(f'{name} must be >= 1')
        for name in ('d_att', 'd_comp'):
            if getattr(self, name) < 0:
                out.append(f'{name} must be >= 0')
        if self.backward_leaf and self.d_hidden % 2:
            out.append('d_hidden must be even when backward_leaf is on')
        if self.encoder not in ENCODERS:
            out.append(f'encoder must be one of {ENCODERS}')
        if self.rare_words not in RARE_WORD_MODES:
            out.append(f'rare_words must be one of {RARE_WORD_MODES}')
        if self.encoder == 'sequential':
            if not (self.beta_mode.kind == 'unweighted'
                    or (self.beta_mode.kind == 'fixed' and self.beta_mode.value == 0.0)):
                out.append('the sequential encoder has no phrase states; use beta_mode fixed:0.0 or unweighted')
        elif self.rare_words == 'sequential':
            out.append('rare_words = sequential needs encoder = sequential (tree leaves must match tokens)')
        return out

    def to_dict(self):
        data = asdict(self)
        data['beta_mode'] = str(self.beta_mode)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['beta_mode'] = BetaMode.parse(data['beta_mode'])
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = DESK_DEFAULTS['batch_size']
    max_epochs: int = 10
    shuffle_seed: int = -1  # < 0 derives it from seed
    seed: int = 1
    max_sentence_length: int = DESK_DEFAULTS['max_sentence_length']
    checkpoint_every: int = 1
    rho: float = 0.95
    eps: float = 1e-6
    threads: int = 1
    debug: bool = False

    def problems(self):
        out = list(self.model.problems())
        if self.batch_size < 1:
            out.append('batch_size must be >= 1')
        if self.max_sentence_length < 1:
            out.append('max_sentence_length must be >= 1')
        if self.max_epochs < 0:
            out.append('max_epochs must be >= 0')
        if self.checkpoint_every < 0:
            out.append('checkpoint_every must be >= 0')
        if not 0.0 < self.rho < 1.0:
            out.append('rho must lie in (0, 1)')
        if self.eps <= 0.0:
            out.append('eps must be > 0')
        if self.threads < 1:
            out.append('threads must be >= 1')
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != 'model'}
        data.update(self.model.to_dict())
        return data


_MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig) if f.name != 'model'}


def _convert(key, raw, kind):
    if key == 'beta_mode':
        return BetaMode.parse(raw)
    if kind in (bool, 'bool'):
        lowered = str(raw).strip().lower()
        if lowered in ('1', 'true', 'yes', 'on'):
            return True
        if lowered in ('0', 'false', 'no', 'off'):
            return False
        raise ValueError(f'expected a boolean, got {raw!r}')
    if kind in (int, 'int'):
        return int(raw)
    if kind in (float, 'float'):
        return float(raw)
    return str(raw).strip()


def build_config(values, base=None):
    """Apply string or typed `values` on top of `base`, collecting all problems."""
    base = base or TrainConfig()
    model_updates, train_updates, problems = {}, {}, []
    for key, raw in values.items():
        if key in _MODEL_KEYS:
            target, kind = model_updates, _MODEL_KEYS[key]
        elif key in _TRAIN_KEYS:
            target, kind = train_updates, _TRAIN_KEYS[key]
        else:
            problems.append(f'unknown config key {key!r}')
            continue
        if not isinstance(raw, str):
            target[key] = raw
            continue
        try:
            target[key] = _convert(key, raw, kind)
        except ValueError as e:
            problems.append(f'{key}: {e}')
    if problems:
        raise ConfigError(problems)
    cfg = replace(base, model=replace(base.model, **model_updates), **train_updates)
    return cfg.validate()


def load_config(path=None, overrides=None):
    values, problems = ({}, []) if path is None else read_key_values(path)
    values.update(overrides or {})
    try:
        cfg = build_config(values)
    except ConfigError as e:
        raise ConfigError(problems + e.problems) from None
    if problems:
        raise ConfigError(problems)
    logger.debug('config: %s', cfg.to_dict())
    return cfg
