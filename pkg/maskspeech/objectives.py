# -*- coding: utf-8 -*-

"""Training objectives.

  * masked_cross_entropy -- audio token loss on masked cells.
  * nn_interpolate -- nearest-neighbour resampling along time.
  * semantic_ce -- distillation loss against discrete semantic codes.
  * semantic_cosine -- distillation loss against continuous features.
  * combined_loss -- alpha * audio + beta * semantic.
  * huber_log_duration -- duration loss on log-seconds.

All losses take either single items (no batch axis) or padded batches.
A batch is reduced to the mean of its per-item means.
"""

from __future__ import absolute_import, division, print_function

import logging

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)


def _tensor(x, dtype=None):
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def masked_cross_entropy(audio_logits, targets, mask):
    """Cross-entropy of the audio tokens at masked cells.

    Parameters
    ----------
    audio_logits : Tensor, shape ([B,] K, T, V)
        Token logits.
    targets : LongTensor, shape ([B,] K, T)
        Ground-truth tokens.  Only values at masked cells are read.
    mask : BoolTensor, shape ([B,] K, T)
        True at masked cells.  Padding cells must be False.

    Returns
    -------
    loss : Tensor
        Mean over masked cells of -log softmax(logits)[target],
        averaged over batch items.
    """
    logits = _tensor(audio_logits)
    targets = _tensor(targets, torch.long).to(logits.device)
    mask = _tensor(mask, torch.bool).to(logits.device)

    if logits.ndim == 3:
        logits, targets, mask = logits[None], targets[None], mask[None]
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ValueError('Logits, targets and mask shapes disagree.')

    V = logits.shape[-1]
    counts = mask.sum(dim=(1, 2))
    if bool((counts == 0).any()):
        raise ValueError('Every item needs at least one masked cell.')
    if bool((mask & ((targets < 0) | (targets >= V))).any()):
        raise ValueError('Target values must be in [0, %d).' % V)

    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.clamp(0, V - 1)[..., None])[..., 0]
    nll = torch.where(mask, nll, torch.zeros_like(nll))

    return torch.mean(nll.sum(dim=(1, 2)) / counts.to(nll.dtype))


def nn_interpolate_index(T_in, T_out):
    """Return the source rows of nearest-neighbour interpolation.

    Row j of the output reads row min(T_in - 1, floor((j + 0.5) T_in /
    T_out)) of the input.
    """
    if T_in < 1 or T_out < 1:
        raise ValueError('Sequence lengths must be at least 1.')

    j = np.arange(T_out, dtype=np.int64)
    return np.minimum(T_in - 1, ((2 * j + 1) * T_in) // (2 * T_out))


def nn_interpolate(seq, T_out):
    """Resample a sequence to T_out rows by nearest neighbour.

    Parameters
    ----------
    seq : array or Tensor, shape (T_in, ...)
        Input sequence.
    T_out : int
        Output length.

    Returns
    -------
    out : array or Tensor, shape (T_out, ...)
        Resampled sequence, of the same type as seq.
    """
    index = nn_interpolate_index(len(seq), T_out)
    if isinstance(seq, torch.Tensor):
        return seq[torch.as_tensor(index, device=seq.device)]
    return np.asarray(seq)[index]


def _items(out, targets, lengths):
    """Split padded (B, T, ...) outputs into per-item pairs."""
    if out.ndim == 2:
        return [(out, targets)]

    B, T = out.shape[:2]
    if len(targets) != B:
        raise ValueError('Expected %d semantic targets, got %d.'
                         % (B, len(targets)))
    if lengths is None:
        lengths = [T] * B
    return [(out[i, :int(lengths[i])], targets[i]) for i in range(B)]


def semantic_ce(semantic_logits, codes, frame_lengths=None):
    """Cross-entropy against semantic codes.

    The codes are interpolated to the number of audio frames and the
    cross-entropy is averaged over all frames.

    Parameters
    ----------
    semantic_logits : Tensor, shape ([B,] T, C)
        Logits of the distillation head.
    codes : array_like, shape (T_sem,) or list of B such arrays
        Semantic codes.
    frame_lengths : sequence of int, optional
        Valid frames per batch item (default: T).

    Returns
    -------
    loss : Tensor
        Mean cross-entropy.
    """
    logits = _tensor(semantic_logits)
    C = logits.shape[-1]

    losses = []
    for out, target in _items(logits, codes, frame_lengths):
        target = np.asarray(target, dtype=np.int64)
        if len(target) == 0:
            raise ValueError('Semantic codes must be nonempty.')
        if target.min() < 0 or target.max() >= C:
            raise ValueError('Semantic codes must be in [0, %d).' % C)

        target = torch.as_tensor(nn_interpolate(target, len(out)),
                                 device=out.device)
        losses.append(F.cross_entropy(out, target))

    return torch.stack(losses).mean()


def _cosine_loss(pred, target):
    target = nn_interpolate(target, len(pred))

    num = torch.sum(pred * target, dim=0)
    sq = torch.sum(pred * pred, dim=0) * torch.sum(target * target, dim=0)
    ok = sq > 0
    if not bool(ok.all()):
        logger.debug('Cosine loss: %d of %d dimensions have a zero-norm '
                     'column', int((~ok).sum()), len(ok))

    safe = torch.where(ok, sq, torch.ones_like(sq))
    cos = torch.where(ok, num * torch.rsqrt(safe), torch.zeros_like(num))
    return 1 - cos.mean()


def semantic_cosine(pred, target_feats, frame_lengths=None):
    """Cosine distillation loss against semantic features.

    For each feature dimension d, the cosine similarity between the
    predicted and the (interpolated) target time series is computed.
    The loss is 1 minus the mean over dimensions, so it lies in [0, 2].
    Dimensions where either series is identically zero count as cosine
    0.

    Parameters
    ----------
    pred : Tensor, shape ([B,] T, D_sem)
        Output of the distillation head.
    target_feats : array_like, shape (T_sem, D_sem) or list of B such
        Semantic features.
    frame_lengths : sequence of int, optional
        Valid frames per batch item (default: T).

    Returns
    -------
    loss : Tensor
        Mean cosine loss.
    """
    pred = _tensor(pred)

    losses = []
    for out, target in _items(pred, target_feats, frame_lengths):
        target = _tensor(target, out.dtype).to(out.device)
        if target.ndim != 2 or target.shape[1] != out.shape[1]:
            raise ValueError('Expected target features of shape '
                             '(T_sem, %d).' % out.shape[1])
        losses.append(_cosine_loss(out, target))

    return torch.stack(losses).mean()


@dataclass
class LossBreakdown:
    """Components of the training loss.

    Fields hold tensors during training and floats after as_floats().
    """
    audio_ce: object
    semantic: object
    total: object
    n_masked: int = 0

    def as_floats(self):
        return LossBreakdown(float(self.audio_ce), float(self.semantic),
                             float(self.total), int(self.n_masked))


def combined_loss(audio_ce, semantic, alpha, beta, n_masked=0):
    """Return the breakdown of alpha * audio_ce + beta * semantic."""
    if alpha < 0 or beta < 0:
        raise ValueError('Loss weights must be nonnegative.')
    return LossBreakdown(audio_ce, semantic, alpha * audio_ce +
                         beta * semantic, n_masked)


def huber_log_duration(pred_log_s, true_s, delta=1.0):
    """Huber loss between predicted and true log-durations.

    Parameters
    ----------
    pred_log_s : Tensor or float
        Predicted natural logarithm of the duration in seconds.
    true_s : Tensor, array or float
        True durations in seconds.
    delta : float, optional (default = 1.0)
        Transition point between the quadratic and the linear branch.

    Returns
    -------
    loss : Tensor
        Mean of e^2 / 2 (|e| <= delta) or delta (|e| - delta / 2), with
        e = pred_log_s - ln(true_s).
    """
    if isinstance(pred_log_s, torch.Tensor):
        pred = pred_log_s
    else:
        pred = torch.as_tensor(pred_log_s, dtype=torch.float64)
    true = _tensor(true_s, pred.dtype).to(pred.device)

    if bool((true <= 0).any()):
        raise ValueError('Durations must be positive.')

    pred, target = torch.broadcast_tensors(pred, torch.log(true))
    return F.huber_loss(pred, target, reduction='mean', delta=delta)
