# -*- coding: utf-8 -*-

"""A deterministic synthetic speech world.

This module stands in for the pretrained components of a real system
(codec, grapheme-to-phoneme model, semantic encoder, speaker encoder)
with closed-form maps whose inverses are known exactly.  Intelligibility
and speaker similarity of generated token grids can therefore be
measured by oracles rather than estimated by other networks.

Codec
-----

  * toy_encode -- maps phonemes and a speaker to a token grid.
  * oracle_decode_phonemes -- recovers phonemes from a token grid.
  * oracle_speaker_consistency -- fraction of frames that carry the
    fingerprint of a given speaker.

Encoders
--------

  * toy_semantic -- semantic features and codes from a phoneme
    timeline.
  * average_layers -- averages a stack of semantic feature layers.
  * toy_speaker_embedding -- unit speaker embedding.
  * enrollment_average -- averages enrollment embeddings.

Corpus
------

  * random_phonemes -- random phoneme sequence without adjacent
    repeats.
  * gen_corpus -- generates a split of the synthetic corpus.
"""

from __future__ import absolute_import, division, print_function

import logging
import math

from dataclasses import dataclass

import numpy as np

from . import utils
from .config import FRAME_RATE_HZ
from .manifest import TokenGrid, Utterance, check_phonemes

logger = logging.getLogger(__name__)

# Offsets of the fine layers.  Both must be invertible modulo V, the
# speaker offset so that distinct speakers never share a fingerprint.
LAYER_STRIDE = 11
SPEAKER_STRIDE = 17


@dataclass(frozen=True)
class ToyWorldSpec:
    """Parameters of the synthetic world.

    Phoneme p lasts phoneme_len_base + (p mod 4) frames.  Utterances
    shorter than min_frames or longer than max_frames (if given) are
    rejected by the corpus generator.
    """
    P: int = 16
    S: int = 8
    V: int = 64
    K: int = 4
    phoneme_len_base: int = 4
    seed: int = 0
    n_utterances: int = 64
    phonemes_per_utt: tuple = (3, 8)
    D_sem: int = 16
    d_speaker: int = 16
    frame_rate_hz: float = FRAME_RATE_HZ
    semantic_rate_hz: float = FRAME_RATE_HZ / 2
    min_frames: int = 1
    max_frames: int = None

    def validate(self):
        if self.V < self.P:
            raise ValueError('Codebook size V must be at least P.')
        if math.gcd(SPEAKER_STRIDE, self.V) != 1:
            raise ValueError('V must be coprime with %d.' % SPEAKER_STRIDE)
        if self.phoneme_len_base < 2:
            raise ValueError('phoneme_len_base must be at least 2.')
        if self.D_sem < self.P:
            raise ValueError('D_sem must be at least P (one-hot '
                             'semantic features).')
        if self.frame_rate_hz != 2 * self.semantic_rate_hz:
            raise ValueError('The semantic rate must be half the frame '
                             'rate.')
        lo, hi = self.phonemes_per_utt
        if not 1 <= lo <= hi:
            raise ValueError('Invalid phonemes_per_utt range.')
        if hi > 1 and self.P < 2:
            raise ValueError('Sequences without adjacent repeats need '
                             'P >= 2.')
        if min(self.P, self.S, self.K, self.d_speaker) < 1:
            raise ValueError('P, S, K and d_speaker must be positive.')
        return self

    @classmethod
    def from_config(cls, model, **kwargs):
        """Build a world matching a ModelConfig."""
        return cls(P=model.P, S=model.S, V=model.V, K=model.K,
                   D_sem=model.D_sem, d_speaker=model.d_speaker,
                   frame_rate_hz=model.frame_rate_hz,
                   semantic_rate_hz=model.semantic_rate_hz,
                   **kwargs).validate()


def phoneme_timeline(phonemes, spec):
    """Return the phoneme active at each audio frame.

    Parameters
    ----------
    phonemes : array_like
        Phoneme ids.
    spec : ToyWorldSpec
        World parameters.

    Returns
    -------
    timeline : array
        Phoneme id of each of the T frames.
    """
    phonemes = check_phonemes(phonemes, spec.P)
    lengths = spec.phoneme_len_base + phonemes % 4
    return np.repeat(phonemes, lengths)


def toy_encode(phonemes, speaker_id, spec):
    """Encode phonemes spoken by a speaker into a token grid.

    Layer 0 carries the phoneme id at every frame of its segment.  Layer
    k >= 1 carries (p + 11k + 17s + (f mod 2)) mod V at global frame f,
    so content and speaker identity are both recoverable from any
    frame.

    Parameters
    ----------
    phonemes : array_like
        Phoneme ids.
    speaker_id : int
        Speaker index in [0, S).
    spec : ToyWorldSpec
        World parameters.

    Returns
    -------
    grid : TokenGrid
        Token grid of shape (K, T).
    """
    if not 0 <= speaker_id < spec.S:
        raise ValueError('Speaker id %r out of range [0, %d).'
                         % (speaker_id, spec.S))

    timeline = phoneme_timeline(phonemes, spec)
    parity = np.arange(len(timeline)) % 2
    k = np.arange(spec.K)[:, np.newaxis]

    tokens = (timeline + LAYER_STRIDE * k + SPEAKER_STRIDE * speaker_id +
              parity) % spec.V
    tokens[0] = timeline

    return TokenGrid(tokens, spec.frame_rate_hz)


def oracle_decode_phonemes(tokens, P):
    """Recover phonemes from a token grid.

    Run-length collapse of layer 0.  Out-of-alphabet values (>= P) are
    first mapped to the garbage phoneme P, so runs of garbage collapse
    into one garbage phoneme.

    Parameters
    ----------
    tokens : TokenGrid or ndarray
        Token grid (K x T).
    P : int
        Phoneme alphabet size.

    Returns
    -------
    phonemes : array
        Decoded phoneme ids, with P standing for garbage.
    """
    grid = getattr(tokens, 'tokens', tokens)
    x = np.asarray(grid)[0]
    x = np.where((x < 0) | (x >= P), P, x)

    keep = np.ones(len(x), dtype=bool)
    keep[1:] = x[1:] != x[:-1]
    return x[keep]


def oracle_speaker_consistency(tokens, speaker_id, spec):
    """Return the fraction of frames consistent with a speaker.

    At each frame f the phoneme is read from layer 0 and the layer 1
    token a speaker s would have produced is recomputed.  The score is
    the fraction of frames where layer 1 matches.

    Parameters
    ----------
    tokens : TokenGrid or ndarray
        Token grid (K x T), K >= 2.
    speaker_id : int
        Speaker index to score against.
    spec : ToyWorldSpec
        World parameters.

    Returns
    -------
    score : float
        Fraction in [0, 1].
    """
    grid = np.asarray(getattr(tokens, 'tokens', tokens))
    if grid.shape[0] < 2:
        raise ValueError('Speaker consistency needs at least two layers.')

    p = grid[0]
    parity = np.arange(grid.shape[1]) % 2
    expected = (p + LAYER_STRIDE + SPEAKER_STRIDE * speaker_id +
                parity) % spec.V

    return float(np.mean(grid[1] == expected))


def toy_semantic(timeline, spec):
    """Return semantic features and codes for a phoneme timeline.

    The semantic encoder runs at half the audio frame rate: semantic
    frame j reads the phoneme active at audio frame min(2j, T - 1).
    Features are one-hot phoneme vectors of dimension D_sem and codes
    are the phoneme ids themselves.

    Parameters
    ----------
    timeline : array
        Phoneme id of each audio frame (see phoneme_timeline()).
    spec : ToyWorldSpec
        World parameters.

    Returns
    -------
    feats : ndarray, shape (ceil(T / 2), D_sem)
        Continuous features.
    codes : array, shape (ceil(T / 2),)
        Discrete codes.
    """
    timeline = np.asarray(timeline, dtype=np.int64)
    T = len(timeline)
    index = np.minimum(2 * np.arange((T + 1) // 2), T - 1)

    codes = timeline[index]
    feats = np.eye(spec.D_sem)[codes]
    return feats, codes


def average_layers(layers):
    """Average a stack of semantic feature layers.

    Parameters
    ----------
    layers : sequence of ndarray
        Feature layers of equal shape (T_sem, D_sem).

    Returns
    -------
    feats : ndarray, shape (T_sem, D_sem)
        Layer average.

    Notes
    -----
    The synthetic semantic encoder has a single layer, so the average
    equals its features.  Real encoders plug in here.
    """
    layers = np.asarray(layers, dtype=float)
    if layers.ndim == 2:
        return layers
    return np.mean(layers, axis=0)


def toy_speaker_embedding(speaker_id, spec):
    """Return the unit embedding of a speaker.

    Parameters
    ----------
    speaker_id : int
        Speaker index in [0, S).
    spec : ToyWorldSpec
        World parameters.

    Returns
    -------
    emb : array, shape (d_speaker,)
        Unit vector drawn from a substream keyed by the speaker.
    """
    if not 0 <= speaker_id < spec.S:
        raise ValueError('Speaker id %r out of range [0, %d).'
                         % (speaker_id, spec.S))

    rng = utils.seeded_rng(utils.split(spec.seed, 'spk', int(speaker_id)))
    v = rng.standard_normal(spec.d_speaker)
    return v / np.linalg.norm(v)


def speaker_table(spec):
    """Return the embeddings of all speakers as an (S, d_speaker) array."""
    return np.array([toy_speaker_embedding(s, spec) for s in range(spec.S)])


def enrollment_average(embs):
    """Average enrollment embeddings into one unit embedding.

    Parameters
    ----------
    embs : sequence of array
        Speaker embeddings of equal dimension.

    Returns
    -------
    emb : array
        L2-normalized arithmetic mean.
    """
    embs = np.asarray(embs, dtype=float)
    if embs.ndim != 2 or len(embs) == 0:
        raise ValueError('Enrollment needs a nonempty list of embeddings '
                         'of equal dimension.')

    mean = np.mean(embs, axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise ValueError('Degenerate enrollment: the mean embedding has '
                         'zero norm.')

    return mean / norm


def random_phonemes(n, P, rng):
    """Return n uniformly random phoneme ids without adjacent repeats.

    Each id after the first is uniform over the P - 1 ids that differ
    from its predecessor, which is the distribution obtained by
    rejecting adjacent duplicates.
    """
    if n > 1 and P < 2:
        raise ValueError('Sequences without adjacent repeats need P >= 2.')

    ids = np.empty(n, dtype=np.int64)
    for i in range(n):
        if i == 0:
            ids[i] = rng.integers(P)
        else:
            x = rng.integers(P - 1)
            ids[i] = x + (x >= ids[i - 1])
    return ids


def make_utterance(phonemes, speaker_id, spec, uid='', split='train'):
    """Build a complete utterance from phonemes and a speaker."""
    phonemes = check_phonemes(phonemes, spec.P)
    grid = toy_encode(phonemes, speaker_id, spec)
    feats, codes = toy_semantic(phoneme_timeline(phonemes, spec), spec)

    return Utterance(uid=uid, split=split, phonemes=phonemes,
                     speaker_id=int(speaker_id), tokens=grid,
                     duration_s=grid.T / spec.frame_rate_hz,
                     semantic_feats=feats, semantic_codes=codes,
                     semantic_rate_hz=spec.semantic_rate_hz)


def _gen_one(i, spec, split, forbidden):
    rng = utils.seeded_rng(utils.split(spec.seed, 'corpus', split, i))
    lo, hi = spec.phonemes_per_utt
    max_frames = spec.max_frames or np.inf

    # Rejection sampling.  Draws stay on this utterance's substream.
    while True:
        n = int(rng.integers(lo, hi + 1))
        phonemes = random_phonemes(n, spec.P, rng)
        T = np.sum(spec.phoneme_len_base + phonemes % 4)
        if not spec.min_frames <= T <= max_frames:
            continue
        if tuple(phonemes) in forbidden:
            continue
        break

    speaker = int(rng.integers(spec.S))
    return make_utterance(phonemes, speaker, spec,
                          uid='%s-%05d' % (split, i), split=split)


def gen_corpus(spec, split='train', n=None, processes=1):
    """Generate a split of the synthetic corpus.

    Every utterance is drawn from its own substream keyed by the split
    and its index, so splits are independent and utterances can be
    generated in parallel.  The dev and test splits reject phoneme
    sequences that occur in the train split.

    Parameters
    ----------
    spec : ToyWorldSpec
        World parameters.
    split : string, optional (default = 'train')
        One of "train", "dev" or "test".
    n : int, optional (default = spec.n_utterances)
        Number of utterances.
    processes : int, optional (default = 1)
        Number of processes (see utils.parallel_map()).

    Returns
    -------
    utts : list of Utterance
        Generated utterances.
    """
    spec.validate()
    if split not in ('train', 'dev', 'test'):
        raise ValueError('Unknown split %r.' % split)
    if n is None:
        n = spec.n_utterances

    forbidden = set()
    if split != 'train':
        train = gen_corpus(spec, 'train', processes=processes)
        forbidden = {tuple(u.phonemes) for u in train}

    utts = utils.parallel_map(_gen_one, range(n),
                              args=(spec, split, forbidden),
                              processes=processes)

    logger.info('Generated %d %s utterances (%d-%d frames)', len(utts),
                split, min(u.T for u in utts) if utts else 0,
                max(u.T for u in utts) if utts else 0)
    return list(utts)
