# -*- coding: utf-8 -*-

"""Configuration schema and presets.

Every hyperparameter of the system lives in one of four frozen
dataclasses.  Two named presets are provided: `paper`, with the values
of the full-scale system, and `toy`, with desk-scale values that train
in minutes on a CPU.

  * ModelConfig -- the masked token Transformer.
  * DurationConfig -- the duration predictor.
  * TrainConfig -- optimization (used for both networks).
  * SamplerConfig -- iterative decoding.
  * preset -- returns a named preset bundle.
  * variant -- applies a training variant to a preset.
  * load_config -- reads a flat JSON document on top of a preset.
"""

from __future__ import absolute_import, division, print_function

import dataclasses
import json
import logging

from dataclasses import dataclass, field, fields, replace

logger = logging.getLogger(__name__)

SKD_MODES = ('none', 'discrete', 'continuous')
SEMANTIC_TARGETS = ('feats', 'avg')
VARIANTS = ('base', 'codes', 'feats', 'avg', 'stageA', 'stageB')

# DAC: 44.1 kHz audio with a striding factor of 512.
FRAME_RATE_HZ = 44100 / 512


class ConfigError(ValueError):
    """Raised for invalid configurations and configuration files."""


def _positive(obj, names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ConfigError('%s.%s must be positive, got %r.'
                              % (type(obj).__name__, name,
                                 getattr(obj, name)))


@dataclass(frozen=True)
class ModelConfig:
    """Masked token Transformer hyperparameters.

    K, V, P and S are the number of RVQ layers, the codebook size, the
    phoneme alphabet size and the number of speakers.  D_sem and C are
    the semantic feature dimension and the semantic codebook size used
    by the distillation head.  cond_vocab > 0 adds a table of semantic
    code embeddings summed onto the audio positions (second stage of
    the two-stage baseline).
    """
    K: int = 4
    V: int = 64
    P: int = 16
    S: int = 8
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    skd_mode: str = 'none'
    D_sem: int = 16
    C: int = 16
    d_speaker: int = 16
    max_frames: int = 2048
    max_phonemes: int = 256
    frame_rate_hz: float = FRAME_RATE_HZ
    semantic_rate_hz: float = FRAME_RATE_HZ / 2
    cond_vocab: int = 0

    def validate(self):
        _positive(self, ('K', 'V', 'P', 'S', 'd_model', 'n_layers',
                         'n_heads', 'd_ff', 'd_speaker', 'max_frames',
                         'max_phonemes', 'frame_rate_hz',
                         'semantic_rate_hz'))
        if self.skd_mode not in SKD_MODES:
            raise ConfigError('Unknown skd_mode %r.  Should be one of %s.'
                              % (self.skd_mode, ', '.join(SKD_MODES)))
        if self.skd_mode == 'discrete' and self.C < 1:
            raise ConfigError("skd_mode 'discrete' requires C >= 1.")
        if self.skd_mode == 'continuous' and self.D_sem < 1:
            raise ConfigError("skd_mode 'continuous' requires D_sem >= 1.")
        if self.d_model % self.n_heads:
            raise ConfigError('d_model must be divisible by n_heads.')
        if self.cond_vocab < 0:
            raise ConfigError('cond_vocab must be nonnegative.')
        return self


@dataclass(frozen=True)
class DurationConfig:
    """Duration predictor hyperparameters."""
    P: int = 16
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_phonemes: int = 256
    frame_rate_hz: float = FRAME_RATE_HZ

    def validate(self):
        _positive(self, ('P', 'd_model', 'n_layers', 'n_heads', 'd_ff',
                         'max_phonemes', 'frame_rate_hz'))
        if self.d_model % self.n_heads:
            raise ConfigError('d_model must be divisible by n_heads.')
        return self


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    The loss is alpha * audio + beta * semantic.  The learning rate
    warms up linearly to lr_peak over warmup_steps and then decays
    polynomially (power poly_power) to lr_final at total_steps.
    """
    alpha: float = 1.0
    beta: float = 0.0
    lr_peak: float = 5e-4
    lr_final: float = 5e-7
    warmup_steps: int = 100
    total_steps: int = 5000
    poly_power: float = 0.9
    cfg_dropout_p: float = 0.1
    batch_size: int = 16
    seed: int = 0
    huber_delta: float = 1.0
    semantic_target: str = 'feats'
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    grad_accum: int = 1
    checkpoint_interval: int = 500
    log_interval: int = 10
    abort_loss: float = 50.0

    def validate(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigError('Loss weights must satisfy alpha >= 0, '
                              'beta >= 0 and alpha + beta > 0.')
        if not 0 <= self.cfg_dropout_p <= 1:
            raise ConfigError('cfg_dropout_p must be in [0, 1].')
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError('warmup_steps must be smaller than '
                              'total_steps.')
        _positive(self, ('lr_peak', 'batch_size', 'huber_delta',
                         'grad_accum', 'checkpoint_interval',
                         'log_interval', 'abort_loss'))
        if self.lr_final < 0:
            raise ConfigError('lr_final must be nonnegative.')
        if self.batch_size % self.grad_accum:
            raise ConfigError('batch_size must be a multiple of '
                              'grad_accum.')
        if self.semantic_target not in SEMANTIC_TARGETS:
            raise ConfigError('Unknown semantic_target %r.'
                              % self.semantic_target)
        return self


@dataclass(frozen=True)
class SamplerConfig:
    """Iterative decoding hyperparameters.

    Logit noise variance and guidance level are both annealed linearly
    across the n_steps decoding steps.
    """
    n_steps: int = 20
    noise_var_start: float = 3.0
    noise_var_end: float = 0.0
    guidance_start: float = 3.0
    guidance_end: float = 0.75
    seed: int = 0
    use_cfg: bool = True

    def validate(self):
        if self.n_steps < 1:
            raise ConfigError('n_steps must be at least 1.')
        if not self.noise_var_start >= self.noise_var_end >= 0:
            raise ConfigError('Noise variance must satisfy '
                              'start >= end >= 0.')
        if self.guidance_start < self.guidance_end:
            raise ConfigError('guidance_start must be >= guidance_end.')
        return self


@dataclass(frozen=True)
class Preset:
    """Bundle of all configurations for one experiment."""
    name: str
    model: ModelConfig = field(default_factory=ModelConfig)
    duration: DurationConfig = field(default_factory=DurationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    duration_train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    variant: str = 'base'

    def validate(self):
        for part in (self.model, self.duration, self.train,
                     self.duration_train, self.sampler):
            part.validate()
        if self.model.P != self.duration.P:
            raise ConfigError('The generator and the duration predictor '
                              'must share the phoneme alphabet (P = %d '
                              'vs %d).' % (self.model.P, self.duration.P))
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def _paper():
    model = ModelConfig(K=9, V=1024, P=40, S=1151, d_model=1024,
                        n_layers=16, n_heads=16, d_ff=4096, D_sem=768,
                        C=500, d_speaker=256, max_frames=1024,
                        max_phonemes=256, semantic_rate_hz=50.0)
    duration = DurationConfig(P=40, d_model=256, n_layers=6, n_heads=16,
                              d_ff=1024)
    train = TrainConfig(lr_peak=1e-4, lr_final=5e-7, warmup_steps=2000,
                        total_steps=700000, batch_size=64,
                        checkpoint_interval=10000, log_interval=100)
    duration_train = replace(train, lr_peak=1e-3, total_steps=20000,
                             cfg_dropout_p=0.0)
    return Preset('paper', model, duration, train, duration_train,
                  SamplerConfig())


def _toy():
    train = TrainConfig()
    duration_train = replace(train, lr_peak=1e-3, lr_final=1e-5,
                             total_steps=2000, cfg_dropout_p=0.0)
    return Preset('toy', ModelConfig(), DurationConfig(), train,
                  duration_train, SamplerConfig())


PRESETS = {'paper': _paper, 'toy': _toy}

# Alternative names.
ALIASES = {'full': 'paper'}


def preset(name='toy'):
    """Return a named, validated preset.

    Parameters
    ----------
    name : string, optional (default = 'toy')
        Either "paper" or "toy" ("full" is an alias of "paper").

    Returns
    -------
    preset : Preset
        All configurations of the preset, with the `base` variant.
    """
    name = ALIASES.get(name, name)
    if name not in PRESETS:
        raise ConfigError('Unknown preset %r.  Should be one of %s.'
                          % (name, ', '.join(sorted(PRESETS))))
    return PRESETS[name]().validate()


def variant(base, name):
    """Apply a training variant to a preset.

    The four single-stage variants differ only in the distillation
    mode, the semantic target and the loss weights.  The two stages of
    the two-stage baseline change the token layout instead: stage A
    models semantic codes as a single-layer grid at the semantic rate,
    stage B models audio tokens with the semantic codes summed onto
    its inputs.

    Parameters
    ----------
    base : Preset
        Preset to modify.
    name : string
        One of "base", "codes", "feats", "avg", "stageA" or "stageB".

    Returns
    -------
    preset : Preset
        Modified, validated preset.
    """
    m, t = base.model, base.train
    if name == 'base':
        m = replace(m, skd_mode='none')
        t = replace(t, alpha=1.0, beta=0.0)
    elif name == 'codes':
        m = replace(m, skd_mode='discrete')
        t = replace(t, alpha=0.95, beta=0.05)
    elif name == 'feats':
        m = replace(m, skd_mode='continuous')
        t = replace(t, alpha=0.5, beta=0.5, semantic_target='feats')
    elif name == 'avg':
        m = replace(m, skd_mode='continuous')
        t = replace(t, alpha=0.5, beta=0.5, semantic_target='avg')
    elif name == 'stageA':
        m = replace(m, skd_mode='none', K=1, V=m.C,
                    frame_rate_hz=m.semantic_rate_hz, cond_vocab=0)
        t = replace(t, alpha=1.0, beta=0.0)
    elif name == 'stageB':
        m = replace(m, skd_mode='none', cond_vocab=m.C)
        t = replace(t, alpha=1.0, beta=0.0)
    else:
        raise ConfigError('Unknown variant %r.  Should be one of %s.'
                          % (name, ', '.join(VARIANTS)))

    return replace(base, model=m, train=t, variant=name).validate()


def _coerce(cls, key, value):
    kind = {f.name: f.type for f in fields(cls)}[key]
    if kind in (int, 'int') and isinstance(value, float):
        if value != int(value):
            raise ConfigError('Key %r expects an integer.' % key)
        return int(value)
    if kind in (tuple, 'tuple'):
        return tuple(value)
    return value


def _override(obj, values):
    names = {f.name for f in fields(obj)}
    kwargs = {k: _coerce(type(obj), k, v) for k, v in values.items()
              if k in names}
    return replace(obj, **kwargs), set(kwargs)


def from_dict(values, base=None):
    """Build a preset from a flat key-value mapping.

    The special keys "preset" and "variant" select the starting point.
    Any other key overrides every configuration that has a field of
    that name among the model, train and sampler configurations.  Keys
    prefixed with "duration_" override the duration predictor and its
    training configuration instead (e.g., "duration_lr_peak").  The
    phoneme alphabet size "P" applies to both networks.

    Parameters
    ----------
    values : dict
        Flat mapping.
    base : Preset, optional (default = None)
        Starting preset.  By default, the preset named by
        values["preset"] (or "toy").

    Returns
    -------
    preset : Preset
        Validated preset.
    """
    values = dict(values)
    name = values.pop('preset', None)
    var = values.pop('variant', None)

    if base is None:
        base = preset(name or 'toy')
    elif name is not None and name != base.name:
        base = preset(name)
    if var is not None:
        base = variant(base, var)

    main = {k: v for k, v in values.items() if not k.startswith('duration_')}
    dur = {k[len('duration_'):]: v for k, v in values.items()
           if k.startswith('duration_')}
    # One phoneme alphabet for both networks.
    if 'P' in main and 'P' not in dur:
        dur['P'] = main['P']

    model, used_m = _override(base.model, main)
    train, used_t = _override(base.train, main)
    sampler, used_s = _override(base.sampler, main)
    duration, used_d = _override(base.duration, dur)
    duration_train, used_dt = _override(base.duration_train, dur)

    unknown = (set(main) - used_m - used_t - used_s) | \
        {'duration_' + k for k in set(dur) - used_d - used_dt}
    if unknown:
        raise ConfigError('Unknown configuration keys: %s.'
                          % ', '.join(sorted(unknown)))

    return replace(base, model=model, train=train, sampler=sampler,
                   duration=duration,
                   duration_train=duration_train).validate()


def load_config(path, base=None):
    """Read a flat JSON configuration document.

    Parameters
    ----------
    path : str or path-like
        JSON file with a single object of key-value pairs.
    base : Preset, optional (default = None)
        Starting preset (see from_dict()).

    Returns
    -------
    preset : Preset
        Validated preset.
    """
    with open(path) as fp:
        try:
            values = json.load(fp)
        except json.JSONDecodeError as e:
            raise ConfigError('%s: invalid JSON (%s).' % (path, e))

    if not isinstance(values, dict):
        raise ConfigError('%s: expected a JSON object.' % path)

    logger.debug('Loaded configuration %s with keys %s', path,
                 sorted(values))
    return from_dict(values, base=base)


def preset_from_dict(d):
    """Rebuild a preset from the output of Preset.to_dict()."""
    d = dict(d)
    train = dict(d['train'])
    dtrain = dict(d['duration_train'])
    train['adam_betas'] = tuple(train['adam_betas'])
    dtrain['adam_betas'] = tuple(dtrain['adam_betas'])
    return Preset(name=d['name'], model=ModelConfig(**d['model']),
                  duration=DurationConfig(**d['duration']),
                  train=TrainConfig(**train),
                  duration_train=TrainConfig(**dtrain),
                  sampler=SamplerConfig(**d['sampler']),
                  variant=d.get('variant', 'base')).validate()
