# -*- coding: utf-8 -*-

"""Masked token Transformer and duration predictor.

The generator reads a sequence of phoneme embeddings followed by the
masked audio embeddings of a K x T token grid (summed over the K RVQ
layers), runs it through a bidirectional Pre-LN Transformer whose
normalizations are modulated by the speaker embedding (AdaLN) and
predicts the K token distributions at every audio position.  An
optional head predicts semantic codes or features at the same
positions during training.

Modules
-------

  * AdaLN -- layer normalization modulated by a speaker embedding.
  * Block -- Pre-LN Transformer block with AdaLN.
  * MaskedTokenTransformer -- the generator.
  * DurationPredictor -- utterance duration from phonemes.

Functions
---------

  * adaln -- applies an AdaLN site to a single vector.
  * sinusoidal_positions -- fixed positional encodings.
  * build_model -- seeded construction of either network.
  * count_parameters -- analytic parameter count of a ModelConfig.
  * duration_forward -- predicted log-seconds for one utterance.
  * predicted_frames -- frame count from predicted log-seconds.
"""

from __future__ import absolute_import, division, print_function

import math

from dataclasses import dataclass

import numpy as np
import torch

from torch import nn

from . import utils
from .config import DurationConfig, ModelConfig


def sinusoidal_positions(n, d):
    """Return an (n, d) table of sinusoidal positional encodings."""
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(-math.log(10000.0) *
                     torch.arange(0, d, 2, dtype=torch.float64) / d)
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq[:d // 2])
    return pe.float()


class AdaLN(nn.Module):
    """Adaptive layer normalization.

    Computes (1 + scale(s)) * LN(x) + shift(s), where LN has a learned
    elementwise gain and bias and scale, shift are affine maps of the
    speaker embedding s.  The affine maps start at zero, so a fresh
    AdaLN is a plain LayerNorm.
    """

    def __init__(self, d_model, d_speaker):
        super(AdaLN, self).__init__()
        self.d_model = d_model
        self.norm = nn.LayerNorm(d_model)
        self.proj = nn.Linear(d_speaker, 2 * d_model)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x, speaker):
        # x: (B, N, d), speaker: (B, d_speaker)
        scale, shift = torch.split(self.proj(speaker)[:, None],
                                   self.d_model, dim=-1)
        return (1 + scale) * self.norm(x) + shift


def adaln(x, speaker, site):
    """Apply an AdaLN site to a single d_model vector.

    Parameters
    ----------
    x : Tensor, shape (d_model,)
        Input vector.
    speaker : Tensor, shape (d_speaker,)
        Speaker embedding.
    site : AdaLN
        Normalization site.

    Returns
    -------
    y : Tensor, shape (d_model,)
        Modulated, normalized vector.
    """
    return site(x[None, None], speaker[None])[0, 0]


class Block(nn.Module):
    """Pre-LN Transformer block with ReLU feed-forward and AdaLN."""

    def __init__(self, d_model, n_heads, d_ff, d_speaker):
        super(Block, self).__init__()
        self.norm1 = AdaLN(d_model, d_speaker)
        self.attn = nn.MultiheadAttention(d_model, n_heads, dropout=0.0,
                                          batch_first=True)
        self.norm2 = AdaLN(d_model, d_speaker)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(),
                                nn.Linear(d_ff, d_model))

    def forward(self, x, speaker, pad=None):
        h = self.norm1(x, speaker)
        x = x + self.attn(h, h, h, key_padding_mask=pad,
                          need_weights=False)[0]
        return x + self.ff(self.norm2(x, speaker))


@dataclass
class NetworkOutput:
    """Output of MaskedTokenTransformer.

    Attributes
    ----------
    audio_logits : Tensor, shape (B, K, T, V)
        Token logits at every audio position.
    semantic_out : Tensor, shape (B, T, C) or (B, T, D_sem), or None
        Semantic code logits (discrete), semantic features (continuous)
        or None when distillation is off.
    """
    audio_logits: torch.Tensor
    semantic_out: torch.Tensor = None


class MaskedTokenTransformer(nn.Module):
    """Masked audio token model conditioned on phonemes and a speaker.

    Parameters
    ----------
    cfg : ModelConfig
        Hyperparameters.
    """

    def __init__(self, cfg):
        super(MaskedTokenTransformer, self).__init__()
        self.cfg = cfg.validate()
        d = cfg.d_model

        # Row P is the unconditional token.
        self.phoneme_embedding = nn.Embedding(cfg.P + 1, d)
        self.audio_embeddings = nn.ModuleList(
            [nn.Embedding(cfg.V, d) for _ in range(cfg.K)])
        self.mask_embedding = nn.Parameter(torch.randn(d))
        if cfg.cond_vocab:
            self.code_embedding = nn.Embedding(cfg.cond_vocab, d)
        else:
            self.code_embedding = None

        self.blocks = nn.ModuleList(
            [Block(d, cfg.n_heads, cfg.d_ff, cfg.d_speaker)
             for _ in range(cfg.n_layers)])
        self.final_norm = AdaLN(d, cfg.d_speaker)
        self.heads = nn.ModuleList(
            [nn.Linear(d, cfg.V) for _ in range(cfg.K)])

        if cfg.skd_mode == 'discrete':
            self.semantic_head = nn.Linear(d, cfg.C)
        elif cfg.skd_mode == 'continuous':
            self.semantic_head = nn.Linear(d, cfg.D_sem)
        else:
            self.semantic_head = None

        # Small output projections: initial predictions are near uniform.
        for head in list(self.heads) + [self.semantic_head]:
            if head is not None:
                nn.init.trunc_normal_(head.weight, std=0.02)
                nn.init.zeros_(head.bias)

        self.register_buffer(
            'positions',
            sinusoidal_positions(cfg.max_phonemes + cfg.max_frames, d),
            persistent=False)

    def embed_audio(self, tokens, mask, cond_codes=None):
        """Embed a batch of masked token grids.

        Parameters
        ----------
        tokens : LongTensor, shape (B, K, T)
            Token ids.  Values at masked cells are ignored.
        mask : BoolTensor, shape (B, K, T)
            True where the token is replaced by the mask embedding.
        cond_codes : LongTensor, shape (B, T), optional
            Semantic codes summed onto every frame (cond_vocab > 0).

        Returns
        -------
        x : Tensor, shape (B, T, d_model)
            Sum over layers of the (masked) token embeddings.
        """
        cfg = self.cfg
        if tokens.shape != mask.shape or tokens.shape[1] != cfg.K:
            raise ValueError('Expected tokens and mask of shape (B, %d, T).'
                             % cfg.K)

        bad = ~mask & ((tokens < 0) | (tokens >= cfg.V))
        if bool(bad.any()):
            raise ValueError('Token values must be in [0, %d).' % cfg.V)

        tokens = tokens.masked_fill(mask, 0)
        x = 0
        for k, table in enumerate(self.audio_embeddings):
            e = table(tokens[:, k])
            x = x + torch.where(mask[:, k, :, None],
                                self.mask_embedding.to(e.dtype), e)

        if self.code_embedding is not None:
            if cond_codes is None:
                raise ValueError('This model needs semantic conditioning '
                                 'codes.')
            x = x + self.code_embedding(cond_codes)

        return x

    def forward(self, phonemes, tokens, mask, speaker, phoneme_lengths=None,
                frame_lengths=None, uncond=None, cond_codes=None):
        """Predict token logits at every audio position.

        Parameters
        ----------
        phonemes : LongTensor, shape (B, L), or None
            Padded phoneme ids.  None conditions every item on the
            unconditional token.
        tokens : LongTensor, shape (B, K, T)
            Padded token grids.
        mask : BoolTensor, shape (B, K, T)
            True at masked cells.
        speaker : Tensor, shape (B, d_speaker)
            Speaker embeddings.
        phoneme_lengths : LongTensor, shape (B,), optional
            Number of valid phonemes per item (default: L).
        frame_lengths : LongTensor, shape (B,), optional
            Number of valid frames per item (default: T).
        uncond : BoolTensor, shape (B,), optional
            Items whose phoneme segment is replaced by the single
            unconditional token.
        cond_codes : LongTensor, shape (B, T), optional
            Semantic codes for models with cond_vocab > 0.

        Returns
        -------
        out : NetworkOutput
            Audio logits (B, K, T, V) and optional semantic output.
        """
        cfg = self.cfg
        B, K, T = tokens.shape
        device = tokens.device

        if T > cfg.max_frames:
            raise ValueError('%d frames exceed max_frames = %d.'
                             % (T, cfg.max_frames))
        if speaker.shape != (B, cfg.d_speaker):
            raise ValueError('Expected speaker embeddings of shape '
                             '(%d, %d).' % (B, cfg.d_speaker))

        if phonemes is None:
            phonemes = torch.zeros(B, 1, dtype=torch.long, device=device)
            uncond = torch.ones(B, dtype=torch.bool, device=device)
        if phonemes.ndim != 2 or phonemes.shape[0] != B:
            raise ValueError('Expected phonemes of shape (B, L).')

        L = phonemes.shape[1]
        if L > cfg.max_phonemes:
            raise ValueError('%d phonemes exceed max_phonemes = %d.'
                             % (L, cfg.max_phonemes))

        if phoneme_lengths is None:
            phoneme_lengths = torch.full((B,), L, dtype=torch.long,
                                         device=device)
        if frame_lengths is None:
            frame_lengths = torch.full((B,), T, dtype=torch.long,
                                       device=device)

        if uncond is not None and bool(uncond.any()):
            phonemes = phonemes.clone()
            phonemes[uncond, 0] = cfg.P
            phoneme_lengths = torch.where(uncond,
                                          torch.ones_like(phoneme_lengths),
                                          phoneme_lengths)

        p_range = torch.arange(L, device=device)
        t_range = torch.arange(T, device=device)
        pad = torch.cat([p_range[None] >= phoneme_lengths[:, None],
                         t_range[None] >= frame_lengths[:, None]], dim=1)
        phonemes = phonemes.masked_fill(pad[:, :L], 0)

        # Audio positions continue right after each item's own phonemes.
        pos = torch.cat([p_range[None].expand(B, L),
                         phoneme_lengths[:, None] + t_range[None]], dim=1)

        x = torch.cat([self.phoneme_embedding(phonemes),
                       self.embed_audio(tokens, mask, cond_codes)], dim=1)
        x = x + self.positions[pos].to(x.dtype)

        for block in self.blocks:
            x = block(x, speaker, pad)

        h = self.final_norm(x, speaker)[:, L:]
        logits = torch.stack([head(h) for head in self.heads], dim=1)

        semantic = None
        if self.semantic_head is not None:
            semantic = self.semantic_head(h)

        return NetworkOutput(logits, semantic)


class DurationPredictor(nn.Module):
    """Predict utterance duration (natural log of seconds) from phonemes.

    A learned classification token is prepended to the phoneme
    embeddings, the sequence runs through a Pre-LN Transformer encoder
    and the output at the classification token is projected to a
    scalar.

    Parameters
    ----------
    cfg : DurationConfig
        Hyperparameters.
    """

    def __init__(self, cfg):
        super(DurationPredictor, self).__init__()
        self.cfg = cfg.validate()
        d = cfg.d_model

        self.phoneme_embedding = nn.Embedding(cfg.P, d)
        self.cls = nn.Parameter(torch.randn(d))
        layer = nn.TransformerEncoderLayer(d, cfg.n_heads, cfg.d_ff,
                                           dropout=0.0, activation='relu',
                                           batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(layer, cfg.n_layers,
                                             enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, 1)

        self.register_buffer('positions',
                             sinusoidal_positions(cfg.max_phonemes + 1, d),
                             persistent=False)

    def forward(self, phonemes, lengths=None):
        """Return predicted log-seconds, shape (B,)."""
        B, L = phonemes.shape
        if L > self.cfg.max_phonemes:
            raise ValueError('%d phonemes exceed max_phonemes = %d.'
                             % (L, self.cfg.max_phonemes))
        if lengths is None:
            lengths = torch.full((B,), L, dtype=torch.long,
                                 device=phonemes.device)

        r = torch.arange(L, device=phonemes.device)
        pad = r[None] >= lengths[:, None]
        phonemes = phonemes.masked_fill(pad, 0)

        x = self.phoneme_embedding(phonemes)
        x = torch.cat([self.cls.to(x.dtype).expand(B, 1, -1), x], dim=1)
        x = x + self.positions[:L + 1].to(x.dtype)
        pad = torch.cat([torch.zeros(B, 1, dtype=torch.bool,
                                     device=pad.device), pad], dim=1)

        h = self.encoder(x, src_key_padding_mask=pad)
        return self.out(self.norm(h[:, 0]))[:, 0]


def build_model(cfg, seed=0):
    """Construct a network with seeded initialization.

    The global torch random state is restored afterwards.

    Parameters
    ----------
    cfg : ModelConfig or DurationConfig
        Hyperparameters; the type selects the network.
    seed : int, optional (default = 0)
        Initialization seed.

    Returns
    -------
    model : MaskedTokenTransformer or DurationPredictor
        Fresh network.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(utils.split(seed, 'init') % 2 ** 63)
        if isinstance(cfg, DurationConfig):
            return DurationPredictor(cfg)
        if isinstance(cfg, ModelConfig):
            return MaskedTokenTransformer(cfg)

    raise TypeError('Expected a ModelConfig or a DurationConfig.')


def count_parameters(cfg):
    """Return the number of parameters of a MaskedTokenTransformer.

    Computed from the configuration alone, without instantiating any
    weights.

    Parameters
    ----------
    cfg : ModelConfig
        Hyperparameters.

    Returns
    -------
    n : int
        Number of trainable parameters.
    """
    d, f, s = cfg.d_model, cfg.d_ff, cfg.d_speaker

    norm = 2 * d + (s * 2 * d + 2 * d)
    attn = (3 * d * d + 3 * d) + (d * d + d)
    ff = (d * f + f) + (f * d + d)
    block = 2 * norm + attn + ff

    n = (cfg.P + 1) * d + cfg.K * cfg.V * d + d + cfg.cond_vocab * d
    n += cfg.n_layers * block + norm
    n += cfg.K * (d * cfg.V + cfg.V)

    if cfg.skd_mode == 'discrete':
        n += d * cfg.C + cfg.C
    elif cfg.skd_mode == 'continuous':
        n += d * cfg.D_sem + cfg.D_sem

    return n


def duration_forward(phonemes, model):
    """Return the predicted duration of one utterance in log-seconds.

    Parameters
    ----------
    phonemes : array_like
        Phoneme ids.
    model : DurationPredictor
        Duration network.

    Returns
    -------
    log_s : float
        Natural logarithm of the predicted duration in seconds.
    """
    ids = torch.as_tensor(np.asarray(phonemes, dtype=np.int64))[None]
    ids = ids.to(model.cls.device)
    with torch.no_grad():
        return float(model(ids)[0])


def predicted_frames(log_s, frame_rate_hz):
    """Return the number of frames for a predicted log-duration.

    Parameters
    ----------
    log_s : float
        Natural logarithm of the duration in seconds.
    frame_rate_hz : float
        Audio frame rate.

    Returns
    -------
    T : int
        max(1, round(exp(log_s) * frame_rate_hz)).
    """
    if not np.isfinite(log_s):
        raise ValueError('Predicted log-duration must be finite.')

    # exp() overflows to inf beyond ~709; such lengths are clamped by
    # max_frames downstream anyway.
    seconds = math.exp(min(log_s, 700.0))
    return max(1, utils.round_half(seconds * frame_rate_hz))
