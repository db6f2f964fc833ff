# -*- coding: utf-8 -*-

"""Domain types and manifest I/O.

  * TokenGrid -- K x T grid of audio tokens.
  * Utterance -- phonemes, speaker, tokens and semantic targets.
  * check_phonemes -- validates a phoneme id sequence.
  * load_manifest -- reads utterances from a JSON Lines manifest.
  * save_manifest -- writes utterances to a JSON Lines manifest.

A phoneme sequence is a 1-D integer array and a mask grid is a K x T
boolean array (True = masked); neither needs a class of its own.
"""

from __future__ import absolute_import, division, print_function

import json
import logging

from dataclasses import dataclass

import numpy as np

from . import utils

logger = logging.getLogger(__name__)

SPLITS = ('train', 'dev', 'test')


class ManifestError(ValueError):
    """Raised for malformed manifest records.

    Attributes
    ----------
    lineno : int
        1-based line number of the offending record.
    field : str
        Name of the offending field.
    """

    def __init__(self, lineno, field, message):
        self.lineno = lineno
        self.field = field
        super(ManifestError, self).__init__('line %d, field %r: %s'
                                            % (lineno, field, message))


@dataclass
class TokenGrid:
    """Integer grid of audio tokens.

    Attributes
    ----------
    tokens : ndarray, shape (K, T)
        Token ids.
    frame_rate_hz : float
        Frames per second.
    """
    tokens: np.ndarray
    frame_rate_hz: float

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 2 or min(self.tokens.shape) < 1:
            raise ValueError('Token grid must be a nonempty K x T array.')
        if not self.frame_rate_hz > 0:
            raise ValueError('Frame rate must be positive.')

    @property
    def K(self):
        return self.tokens.shape[0]

    @property
    def T(self):
        return self.tokens.shape[1]

    @property
    def duration_s(self):
        return self.T / self.frame_rate_hz

    def check(self, V):
        """Raise ValueError unless all tokens are in [0, V)."""
        if self.tokens.min() < 0 or self.tokens.max() >= V:
            raise ValueError('Token values must be in [0, %d).' % V)
        return self


def check_phonemes(ids, P=None):
    """Validate a phoneme id sequence.

    Parameters
    ----------
    ids : array_like
        Phoneme ids.
    P : int, optional (default = None)
        Alphabet size.  If given, ids must be in [0, P).

    Returns
    -------
    ids : array
        1-D int64 array.
    """
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if len(ids) == 0:
        raise ValueError('Phoneme sequence must be nonempty.')
    if ids.min() < 0 or (P is not None and ids.max() >= P):
        raise ValueError('Phoneme ids must be in [0, %s).' % P)
    return ids


@dataclass
class Utterance:
    """One utterance of the corpus.

    Attributes
    ----------
    uid : str
        Utterance id.
    split : str
        One of "train", "dev" or "test".
    phonemes : array
        Phoneme ids.
    speaker_id : int
        Speaker index.
    tokens : TokenGrid
        Audio tokens.
    duration_s : float
        Duration in seconds (= T / frame rate).
    semantic_feats : ndarray, shape (T_sem, D_sem)
        Continuous semantic features.
    semantic_codes : array, shape (T_sem,)
        Discrete semantic codes.
    semantic_rate_hz : float
        Semantic frames per second.
    """
    uid: str
    split: str
    phonemes: np.ndarray
    speaker_id: int
    tokens: TokenGrid
    duration_s: float
    semantic_feats: np.ndarray
    semantic_codes: np.ndarray
    semantic_rate_hz: float

    @property
    def T(self):
        return self.tokens.T

    @property
    def T_sem(self):
        return len(self.semantic_codes)

    def check(self, V=None, P=None, S=None, C=None):
        """Check the utterance invariants.

        Raises (field, message) pairs as ValueError arguments so that
        load_manifest() can name the offending field.
        """
        def fail(name, message):
            raise ValueError(name, message)

        if self.split not in SPLITS:
            fail('split', 'unknown split %r' % self.split)
        try:
            check_phonemes(self.phonemes, P)
        except ValueError as e:
            fail('phonemes', str(e))
        if self.speaker_id < 0 or (S is not None and self.speaker_id >= S):
            fail('speaker_id', 'speaker id %d out of range' % self.speaker_id)
        if self.tokens.tokens.min() < 0 or \
                (V is not None and self.tokens.tokens.max() >= V):
            fail('tokens', 'token values must be in [0, %s)' % V)
        if abs(self.duration_s - self.tokens.duration_s) > 1e-9:
            fail('duration_s', 'duration %r does not match %d frames at '
                 '%r Hz' % (self.duration_s, self.T,
                            self.tokens.frame_rate_hz))
        # round(duration * rate), with slack for x.5 ties that the
        # product represents as x.4999...
        exact = self.duration_s * self.semantic_rate_hz
        T_sem = utils.round_half(exact)
        if abs(len(self.semantic_codes) - exact) > 0.5 + 1e-9:
            fail('semantic_codes', 'expected %d semantic frames, got %d'
                 % (T_sem, len(self.semantic_codes)))
        if len(self.semantic_codes) and (self.semantic_codes.min() < 0 or
                                         (C is not None and
                                          self.semantic_codes.max() >= C)):
            fail('semantic_codes', 'code values must be in [0, %s)' % C)
        if self.semantic_feats.ndim != 2 or \
                len(self.semantic_feats) != len(self.semantic_codes):
            fail('semantic_feats', 'expected shape (%d, D_sem)'
                 % len(self.semantic_codes))
        return self

    def to_record(self):
        return {
            'uid': self.uid,
            'split': self.split,
            'phonemes': self.phonemes.tolist(),
            'speaker_id': int(self.speaker_id),
            'tokens': self.tokens.tokens.tolist(),
            'frame_rate_hz': float(self.tokens.frame_rate_hz),
            'duration_s': float(self.duration_s),
            'semantic_feats': self.semantic_feats.tolist(),
            'semantic_codes': self.semantic_codes.tolist(),
            'semantic_rate_hz': float(self.semantic_rate_hz),
        }


def _from_record(record, lineno):
    def get(name):
        if name not in record:
            raise ManifestError(lineno, name, 'missing field')
        return record[name]

    def ints(name):
        value = get(name)
        try:
            a = np.asarray(value)
        except ValueError:
            raise ManifestError(lineno, name, 'ragged array')
        if a.size and not np.issubdtype(a.dtype, np.integer):
            raise ManifestError(lineno, name, 'expected integers')
        return a.astype(np.int64)

    def real(name):
        value = get(name)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ManifestError(lineno, name, 'expected a number')
        return float(value)

    def string(name):
        value = get(name)
        if not isinstance(value, str):
            raise ManifestError(lineno, name, 'expected a string')
        return value

    value = get('semantic_feats')
    try:
        feats = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ManifestError(lineno, 'semantic_feats', 'expected reals')
    if feats.size == 0:
        feats = feats.reshape(0, 0)

    rate = get('frame_rate_hz')
    if not isinstance(rate, (int, float)) or not rate > 0:
        raise ManifestError(lineno, 'frame_rate_hz', 'expected a positive '
                            'number')
    grid = ints('tokens')
    try:
        tokens = TokenGrid(grid, float(rate))
    except ValueError as e:
        raise ManifestError(lineno, 'tokens', str(e))

    speaker = get('speaker_id')
    if not isinstance(speaker, int) or isinstance(speaker, bool):
        raise ManifestError(lineno, 'speaker_id', 'expected an integer')

    return Utterance(uid=str(get('uid')), split=string('split'),
                     phonemes=ints('phonemes'), speaker_id=speaker,
                     tokens=tokens, duration_s=real('duration_s'),
                     semantic_feats=feats,
                     semantic_codes=ints('semantic_codes'),
                     semantic_rate_hz=real('semantic_rate_hz'))


def load_manifest(path, config=None):
    """Read utterances from a JSON Lines manifest.

    Parameters
    ----------
    path : str or path-like
        Manifest with one JSON object per line.  Blank lines are
        skipped.
    config : ModelConfig, optional (default = None)
        If given, token, phoneme, speaker and code ranges are checked
        against V, P, S and C.

    Returns
    -------
    utts : list of Utterance
        Utterances in file order.

    Raises
    ------
    ManifestError
        For the first malformed record, naming its line number and the
        offending field.
    """
    bounds = {}
    if config is not None:
        bounds = dict(V=config.V, P=config.P, S=config.S, C=config.C)

    utts = []
    with open(path) as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(lineno, '<record>', 'invalid JSON (%s)'
                                    % e)
            if not isinstance(record, dict):
                raise ManifestError(lineno, '<record>', 'expected object')

            utt = _from_record(record, lineno)
            try:
                utt.check(**bounds)
            except ValueError as e:
                name, message = e.args
                raise ManifestError(lineno, name, message)
            utts.append(utt)

    logger.debug('Read %d utterances from %s', len(utts), path)
    return utts


def save_manifest(utts, path):
    """Write utterances to a JSON Lines manifest.

    Reals are written with Python's shortest round-trip repr, so
    load_manifest() reproduces them exactly.

    Parameters
    ----------
    utts : iterable of Utterance
        Utterances to write.
    path : str or path-like
        Output file.
    """
    n = 0
    with open(path, 'w') as fp:
        for utt in utts:
            fp.write(json.dumps(utt.to_record()) + "\n")
            n += 1

    logger.debug('Wrote %d utterances to %s', n, path)
