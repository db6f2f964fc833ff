# -*- coding: utf-8 -*-

"""Cosine masking schedule.

The same schedule drives random masking during training and the number
of positions revealed at each step of iterative decoding.

  * mask_fraction -- the cosine schedule gamma(r) = cos(pi r / 2).
  * sample_training_mask -- draws a random mask for one example.
  * build_unmask_plan -- per-step masked counts for decoding.
"""

from __future__ import absolute_import, division, print_function

from dataclasses import dataclass

import numpy as np

from . import utils


def mask_fraction(r):
    """Return the fraction of masked positions at progress r.

    Parameters
    ----------
    r : float or array
        Progress in [0, 1].

    Returns
    -------
    gamma : float or array
        cos(pi * r / 2), decreasing from 1 at r = 0 to 0 at r = 1.
    """
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError('Progress r must be in [0, 1].')

    gamma = np.cos(0.5 * np.pi * r)
    # cos(pi/2) is 6e-17 in floating point.
    gamma = np.where(r == 1, 0.0, gamma)

    if gamma.ndim == 0:
        return float(gamma)
    return gamma


def sample_training_mask(K, T, rng, r=None):
    """Draw a random training mask.

    A ratio r ~ U(0, 1) is drawn and max(1, round(gamma(r) K T))
    positions of the flattened K x T grid are masked, chosen uniformly
    without replacement.  Each (layer, frame) cell is masked on its
    own.

    Parameters
    ----------
    K : int
        Number of RVQ layers.
    T : int
        Number of frames.
    rng : numpy.random.Generator
        Random stream.
    r : float, optional (default = None)
        Use this ratio instead of drawing one.

    Returns
    -------
    mask : ndarray, shape (K, T)
        Boolean mask (True = masked) with at least one True entry.
    r : float
        Ratio used.
    """
    if K < 1 or T < 1:
        raise ValueError('K and T must be at least 1.')

    if r is None:
        r = float(rng.random())

    n = K * T
    m = max(1, utils.round_half(mask_fraction(r) * n))

    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=m, replace=False)] = True

    return mask.reshape(K, T), r


@dataclass(frozen=True)
class UnmaskPlan:
    """Number of positions still masked after each decoding step.

    Attributes
    ----------
    masked_after_step : array, shape (n_steps,)
        Nonincreasing counts ending at 0.
    n_positions : int
        Number of positions masked before the first step.
    """
    masked_after_step: np.ndarray
    n_positions: int

    @property
    def n_steps(self):
        return len(self.masked_after_step)

    @property
    def unmask_counts(self):
        """Number of positions revealed at each step."""
        before = np.concatenate(([self.n_positions],
                                 self.masked_after_step[:-1]))
        return before - self.masked_after_step


def build_unmask_plan(n_positions, n_steps):
    """Build the decoding plan from the cosine schedule.

    After step i (0-based) round(gamma((i + 1) / n_steps) n_positions)
    positions remain masked.  The counts are made nonincreasing and the
    last one is forced to zero so that decoding always completes.

    Parameters
    ----------
    n_positions : int
        Number of positions to generate (K T).
    n_steps : int
        Number of decoding steps.

    Returns
    -------
    plan : UnmaskPlan
        Decoding plan.
    """
    if n_positions < 1 or n_steps < 1:
        raise ValueError('n_positions and n_steps must be at least 1.')

    progress = np.arange(1, n_steps + 1) / n_steps
    counts = utils.round_half(mask_fraction(progress) * n_positions)
    counts = np.minimum.accumulate(np.clip(counts, 0, n_positions))
    counts[-1] = 0

    return UnmaskPlan(counts.astype(np.int64), int(n_positions))
