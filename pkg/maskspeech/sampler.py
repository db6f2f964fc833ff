# -*- coding: utf-8 -*-

"""Iterative parallel decoding.

Decoding starts from a fully masked K x T grid.  At every step the
network predicts all masked cells, a token is sampled for each of them
from the (guided, noised) distribution and the most confident ones are
written.  The number of cells written per step follows the cosine
unmask plan, so the grid is complete after n_steps steps.

  * guidance_level -- classifier-free guidance weight at a step.
  * noise_variance -- variance of the logit noise at a step.
  * cfg_combine -- classifier-free guidance.
  * step_unmask -- one unmasking step.
  * decode -- decodes one token grid.
  * decode_two_stage -- semantic codes first, then audio tokens.
"""

from __future__ import absolute_import, division, print_function

import logging

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from scipy.special import softmax

from . import utils
from .manifest import TokenGrid, check_phonemes
from .masking import build_unmask_plan
from .objectives import nn_interpolate

logger = logging.getLogger(__name__)


def _linear(start, end, i, n_steps):
    if not 0 <= i < n_steps:
        raise ValueError('Step index %r out of range [0, %d).' % (i, n_steps))
    if n_steps == 1:
        return None
    return start + (end - start) * i / (n_steps - 1)


def guidance_level(i, n_steps, cfg):
    """Return the guidance weight at step i.

    Decreases linearly from cfg.guidance_start at the first step to
    cfg.guidance_end at the last.  A single-step decode uses
    guidance_start.
    """
    w = _linear(cfg.guidance_start, cfg.guidance_end, i, n_steps)
    return cfg.guidance_start if w is None else w


def noise_variance(i, n_steps, cfg):
    """Return the logit noise variance at step i.

    Decreases linearly from cfg.noise_var_start at the first step to
    cfg.noise_var_end at the last.  A single-step decode uses
    noise_var_end.
    """
    v = _linear(cfg.noise_var_start, cfg.noise_var_end, i, n_steps)
    return cfg.noise_var_end if v is None else max(0.0, v)


def cfg_combine(cond_logits, uncond_logits, w):
    """Return uncond + w (cond - uncond).

    The weights 1 and 0 return the conditional and the unconditional
    logits exactly.
    """
    cond = np.asarray(cond_logits)
    uncond = np.asarray(uncond_logits)
    if cond.shape != uncond.shape:
        raise ValueError('Conditional and unconditional logits must have '
                         'the same shape.')

    if w == 1:
        return cond.copy()
    if w == 0:
        return uncond.copy()
    return uncond + w * (cond - uncond)


def step_unmask(tokens, mask, logits, n_to_unmask, rng, noise_var=0.0):
    """Reveal the most confident masked cells.

    Gaussian noise of variance noise_var is added to the logits of the
    masked cells, a token is sampled for each of them from the noised
    softmax, and the n_to_unmask cells whose sampled tokens have the
    highest probability are written.  Ties are broken in (layer, frame)
    order.  Unmasked cells are never touched.

    Parameters
    ----------
    tokens : ndarray, shape (K, T)
        Current tokens (values at masked cells are ignored).
    mask : ndarray, shape (K, T)
        True at masked cells.
    logits : ndarray, shape (K, T, V)
        Logits for every cell.
    n_to_unmask : int
        Number of cells to reveal.
    rng : numpy.random.Generator
        Random stream.
    noise_var : float, optional (default = 0)
        Variance of the logit noise.

    Returns
    -------
    tokens : ndarray, shape (K, T)
        Updated tokens (a new array).
    mask : ndarray, shape (K, T)
        Updated mask (a new array).
    """
    tokens = np.array(tokens, dtype=np.int64)
    mask = np.array(mask, dtype=bool)
    logits = np.asarray(logits, dtype=float)

    K, T = mask.shape
    if logits.shape[:2] != (K, T):
        raise ValueError('Logits must have shape (%d, %d, V).' % (K, T))

    masked = np.flatnonzero(mask)
    if not 0 <= n_to_unmask <= len(masked):
        raise ValueError('Cannot unmask %d of %d masked cells.'
                         % (n_to_unmask, len(masked)))
    if n_to_unmask == 0:
        return tokens, mask

    z = logits.reshape(K * T, -1)[masked]
    if noise_var > 0:
        z = z + np.sqrt(noise_var) * rng.standard_normal(z.shape)

    p = softmax(z, axis=-1)
    V = p.shape[1]

    # Inverse CDF sampling, one uniform per masked cell.
    u = rng.random(len(masked))
    sampled = np.minimum(np.sum(np.cumsum(p, axis=1) < u[:, None], axis=1),
                         V - 1)
    confidence = p[np.arange(len(masked)), sampled]

    # Primary key: confidence (descending); secondary: flat index.
    order = np.lexsort((masked, -confidence))[:n_to_unmask]
    cells = masked[order]

    tokens.flat[cells] = sampled[order]
    mask.flat[cells] = False
    return tokens, mask


@dataclass
class StepRecord:
    """What happened at one decoding step."""
    stage: str
    step: int
    masked_before: int
    n_unmasked: int
    masked_after: int
    guidance: float
    noise_var: float
    forward_passes: int


@dataclass
class DecodeTrace:
    """Record of a decode.

    Attributes
    ----------
    steps : list of StepRecord
        One record per step (per stage for two-stage decodes).
    codes : array or None
        Semantic codes produced by the first stage of a two-stage
        decode.
    """
    steps: list = field(default_factory=list)
    codes: np.ndarray = None

    @property
    def forward_passes(self):
        return sum(s.forward_passes for s in self.steps)

    @property
    def n_steps(self):
        return len(self.steps)

    def masked_counts(self, stage=None):
        return [s.masked_after for s in self.steps
                if stage is None or s.stage == stage]

    def to_dict(self):
        return {
            'forward_passes': self.forward_passes,
            'steps': [asdict(s) for s in self.steps],
            'codes': None if self.codes is None else self.codes.tolist(),
        }


def _logits(model, phonemes, speaker, tokens, mask, cond_codes, guided):
    """Return conditional and unconditional logits, shape (K, T, V)."""
    param = next(model.parameters())
    dtype, device = param.dtype, param.device

    n = 2 if guided else 1
    ph = torch.as_tensor(phonemes, device=device)[None].expand(n, -1)
    tok = torch.as_tensor(tokens, device=device)[None].expand(n, -1, -1)
    msk = torch.as_tensor(mask, device=device)[None].expand(n, -1, -1)
    spk = torch.as_tensor(speaker, dtype=dtype,
                          device=device)[None].expand(n, -1)
    uncond = torch.tensor([False, True][:n], device=device)
    codes = None
    if cond_codes is not None:
        codes = torch.as_tensor(cond_codes, device=device)[None].expand(n, -1)

    with torch.no_grad():
        out = model(ph, tok, msk, spk, uncond=uncond, cond_codes=codes)

    logits = out.audio_logits.double().cpu().numpy()
    if guided:
        return logits[0], logits[1]
    return logits[0], None


def decode(model, phonemes, speaker, T, cfg, rng, cond_codes=None,
           stage='acoustic', trace=None):
    """Decode a token grid by iterative parallel unmasking.

    Parameters
    ----------
    model : MaskedTokenTransformer
        Generator.
    phonemes : array_like
        Phoneme ids.
    speaker : array_like, shape (d_speaker,)
        Speaker embedding.
    T : int
        Number of frames.
    cfg : SamplerConfig
        Sampling hyperparameters.
    rng : numpy.random.Generator
        Random stream.
    cond_codes : array_like, shape (T,), optional
        Semantic codes for models with a conditioning table.
    stage : str, optional (default = 'acoustic')
        Stage tag written to the trace.
    trace : DecodeTrace, optional
        Trace to append to (default: a new one).

    Returns
    -------
    grid : TokenGrid
        Decoded tokens without masked cells.
    trace : DecodeTrace
        Per-step record.
    """
    cfg.validate()
    mcfg = model.cfg
    phonemes = check_phonemes(phonemes, mcfg.P)
    if T < 1:
        raise ValueError('T must be at least 1.')

    if trace is None:
        trace = DecodeTrace()

    model.eval()
    n = cfg.n_steps
    K = mcfg.K
    plan = build_unmask_plan(K * T, n)

    tokens = np.zeros((K, T), dtype=np.int64)
    mask = np.ones((K, T), dtype=bool)
    before = K * T

    for i in range(n):
        w = guidance_level(i, n, cfg) if cfg.use_cfg else 1.0
        v = noise_variance(i, n, cfg)

        cond, uncond = _logits(model, phonemes, speaker, tokens, mask,
                               cond_codes, cfg.use_cfg)
        logits = cfg_combine(cond, uncond, w) if cfg.use_cfg else cond

        after = int(plan.masked_after_step[i])
        tokens, mask = step_unmask(tokens, mask, logits, before - after,
                                   rng, v)
        trace.steps.append(StepRecord(stage, i, before, before - after,
                                      after, float(w), float(v),
                                      2 if cfg.use_cfg else 1))
        before = after

    logger.debug('Decoded %s grid of %d x %d in %d steps', stage, K, T, n)
    return TokenGrid(tokens, mcfg.frame_rate_hz), trace


def decode_two_stage(stage_a, stage_b, phonemes, speaker, T, cfg, rng,
                     T_sem=None):
    """Decode semantic codes, then audio tokens conditioned on them.

    Parameters
    ----------
    stage_a : MaskedTokenTransformer
        Single-layer generator of semantic codes.
    stage_b : MaskedTokenTransformer
        Generator of audio tokens with a code conditioning table.
    phonemes : array_like
        Phoneme ids.
    speaker : array_like
        Speaker embedding.
    T : int
        Number of audio frames.
    cfg : SamplerConfig
        Sampling hyperparameters (used by both stages).
    rng : numpy.random.Generator
        Random stream.
    T_sem : int, optional
        Number of semantic frames.  By default, T scaled by the ratio of
        the two stages' frame rates.

    Returns
    -------
    grid : TokenGrid
        Decoded audio tokens.
    trace : DecodeTrace
        Steps of both stages (tagged "semantic" and "acoustic") and the
        semantic codes.
    """
    if stage_a.cfg.K != 1:
        raise ValueError('The semantic stage must have a single layer.')
    if stage_b.cfg.cond_vocab < stage_a.cfg.V:
        raise ValueError('The acoustic stage cannot embed %d semantic '
                         'codes.' % stage_a.cfg.V)

    if T_sem is None:
        ratio = stage_a.cfg.frame_rate_hz / stage_b.cfg.frame_rate_hz
        T_sem = max(1, utils.round_half(T * ratio))

    codes, trace = decode(stage_a, phonemes, speaker, T_sem, cfg, rng,
                          stage='semantic')
    trace.codes = codes.tokens[0]

    cond = nn_interpolate(trace.codes, T)
    return decode(stage_b, phonemes, speaker, T, cfg, rng, cond_codes=cond,
                  stage='acoustic', trace=trace)
