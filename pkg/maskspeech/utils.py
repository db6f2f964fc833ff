# -*- coding: utf-8 -*-

"""Miscellaneous utility functions.

A module for common utility functions used elsewhere.

  * split -- derives a reproducible child seed from a seed and keys.
  * seeded_rng -- returns a seeded random stream.
  * round_half -- rounds half away from zero.
  * cosine -- cosine similarity of two vectors.
  * levenshtein -- edit distance between two integer sequences.
  * parallel_map -- a parallel version of map().
  * digest -- hex digest of a collection of arrays.
"""

from __future__ import absolute_import, division, print_function

import hashlib

import numpy as np

from numba import jit


def split(seed, *keys):
    """Derive a child seed from a parent seed and a sequence of keys.

    The child seed is a 64-bit integer taken from the SHA-256 digest of
    the parent seed and the keys, so it does not depend on the platform
    or on the order in which other substreams are used.

    Parameters
    ----------
    seed : int
        Parent seed.
    *keys : str or int
        Keys that name the substream, e.g., ("spk", 3).

    Returns
    -------
    child : int
        Child seed in [0, 2**63).

    Example
    -------
    >>> split(7, "mask") == split(7, "mask")
    True
    >>> split(7, "mask") == split(7, "noise")
    False
    """
    text = '/'.join([repr(int(seed))] + [repr(k) for k in keys])
    h = hashlib.sha256(text.encode('utf-8')).digest()
    return int.from_bytes(h[:8], 'little') >> 1


def seeded_rng(seed):
    """Return a seeded random stream.

    Returns a NumPy Generator over the PCG64 bit generator.  PCG64 and
    the Generator methods used in this package (random(),
    standard_normal(), choice(), integers()) produce identical streams
    across platforms for a given seed.

    Parameters
    ----------
    seed : int
        Seed.  Use split() to obtain independent substreams.

    Returns
    -------
    rng : numpy.random.Generator
        Random stream.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def round_half(x):
    """Round half away from zero.

    Python's round() and np.round() round half to even.  Here
    0.5 -> 1, 1.5 -> 2, 2.5 -> 3, and -0.5 -> -1.

    Parameters
    ----------
    x : float or array
        Input.

    Returns
    -------
    y : int or array
        Rounded value (int for scalar input).
    """
    y = np.sign(x) * np.floor(np.abs(x) + 0.5)
    if np.ndim(y) == 0:
        return int(y)
    return y.astype(np.int64)


def cosine(u, v):
    """Return the cosine similarity between two vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


@jit('int64(int64[:], int64[:])', nopython=True)
def _levenshtein(a, b):
    n, m = len(a), len(b)
    prev = np.arange(m + 1).astype(np.int64)
    curr = np.empty(m + 1, dtype=np.int64)

    for i in range(1, n + 1):
        curr[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            curr[j] = min(prev[j] + 1, curr[j - 1] + 1, prev[j - 1] + cost)
        prev, curr = curr, prev

    return prev[m]


def levenshtein(a, b):
    """Return the edit distance between two integer sequences.

    Substitutions, insertions and deletions all have unit cost.

    Parameters
    ----------
    a : array_like
        First sequence of integers.
    b : array_like
        Second sequence of integers.

    Returns
    -------
    d : int
        Levenshtein distance.
    """
    a = np.ascontiguousarray(a, dtype=np.int64).ravel()
    b = np.ascontiguousarray(b, dtype=np.int64).ravel()
    return int(_levenshtein(a, b))


def parallel_map(func, values, args=tuple(), kwargs=dict(),
                 processes=None):
    """Use Pool.apply_async() to get a parallel map().

    Uses Pool.apply_async() to provide a parallel version of map().
    Unlike Pool's map() which does not let you accept arguments and/or
    keyword arguments, this one does.  Results are returned in the
    order of values, so seeded per-item work stays deterministic.

    Parameters
    ----------
    func : function
        This function will be applied on every element of values in
        parallel.
    values : sequence
        Input values.
    args : tuple, optional (default: ())
        Additional arguments for func.
    kwargs : dictionary, optional (default: {})
        Additional keyword arguments for func.
    processes : int, optional (default: None)
        Number of processes to run in parallel.  By default, the output
        of cpu_count() is used.

    Returns
    -------
    results : list
        Output after applying func on each element in values.
    """
    # True single core processing, in order to allow the func to be
    # executed in a Pool in a calling script.
    if processes == 1:
        return [func(value, *args, **kwargs) for value in values]

    from multiprocessing import Pool

    pool = Pool(processes=processes)
    results = [pool.apply_async(func, (value,) + tuple(args), kwargs)
               for value in values]

    pool.close()
    pool.join()

    return [result.get() for result in results]


def digest(arrays):
    """Return a SHA-256 hex digest of a sequence of arrays.

    Used to compare model parameters between runs.

    Parameters
    ----------
    arrays : iterable of array_like
        Arrays (e.g., parameter tensors converted with np.asarray()).

    Returns
    -------
    h : str
        Hex digest.
    """
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode('ascii'))
        h.update(str(a.shape).encode('ascii'))
        h.update(a.tobytes())
    return h.hexdigest()
