# -*- coding: utf-8 -*-

"""Training loops for the generator and the duration predictor.

  * lr_at -- warmup plus polynomial decay learning rate.
  * collate -- pads a list of utterances into a Batch.
  * apply_cfg_dropout -- marks batch items as unconditional.
  * train_step -- one optimization step of the generator.
  * duration_step -- one optimization step of the duration predictor.
  * save_checkpoint, load_checkpoint -- checkpoint I/O.
  * fit -- trains the generator.
  * fit_duration -- trains the duration predictor.

All randomness of a run (batch selection, conditioning dropout and
training masks) comes from one NumPy stream stored in the checkpoint,
so an interrupted run resumes on exactly the same trajectory.
"""

from __future__ import absolute_import, division, print_function

import csv
import dataclasses
import logging
import math
import os

from dataclasses import dataclass, field

import numpy as np
import torch

from tqdm import tqdm

from . import utils
from .config import preset_from_dict
from .data import ToyWorldSpec, average_layers, speaker_table
from .masking import sample_training_mask
from .network import build_model
from .objectives import (LossBreakdown, combined_loss, huber_log_duration,
                         masked_cross_entropy, nn_interpolate, semantic_ce,
                         semantic_cosine)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
METRICS_FIELDS = ('step', 'lr', 'audio_ce', 'semantic', 'total')
DURATION_FIELDS = ('step', 'lr', 'huber')


class TrainingAborted(RuntimeError):
    """Raised when the training loss explodes.

    Attributes
    ----------
    step : int
        Step at which training stopped.
    losses : LossBreakdown or float
        Loss values of the offending batch.
    uids : list of str
        Utterance ids of the offending batch.
    """

    def __init__(self, step, losses, uids):
        self.step = step
        self.losses = losses
        self.uids = list(uids)
        super(TrainingAborted, self).__init__(
            'Training aborted at step %d: loss %s on batch %s'
            % (step, losses, ', '.join(self.uids)))


def lr_at(step, cfg):
    """Return the learning rate at a step.

    Linear warmup from 0 to lr_peak over warmup_steps, followed by a
    polynomial decay to lr_final at total_steps:

        lr_final + (lr_peak - lr_final) (1 - s)^poly_power,

    where s is the fraction of the decay phase elapsed.
    """
    if not 0 <= step <= cfg.total_steps:
        raise ValueError('Step %r out of range [0, %d].'
                         % (step, cfg.total_steps))

    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps

    s = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.lr_final + (cfg.lr_peak - cfg.lr_final) * \
        (1 - s) ** cfg.poly_power


@dataclass
class Batch:
    """A padded batch.

    Phonemes are padded to the longest sequence and token grids to the
    longest utterance; the lengths say which entries are valid.
    """
    uids: list
    phonemes: torch.Tensor = None
    phoneme_lengths: torch.Tensor = None
    tokens: torch.Tensor = None
    frame_lengths: torch.Tensor = None
    speaker: torch.Tensor = None
    semantic_codes: list = None
    semantic_feats: list = None
    cond_codes: torch.Tensor = None
    durations: torch.Tensor = None
    uncond: torch.Tensor = None

    def __len__(self):
        return len(self.uids)

    def subset(self, index):
        """Return the items at the given positions."""
        index = [int(i) for i in index]
        t = torch.as_tensor(index, dtype=torch.long)
        values = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                values[f.name] = None
            elif isinstance(v, torch.Tensor):
                values[f.name] = v[t]
            else:
                values[f.name] = [v[i] for i in index]
        return Batch(**values)


def _pad(arrays, value=0):
    n = max(a.shape[-1] for a in arrays)
    out = np.full((len(arrays),) + arrays[0].shape[:-1] + (n,), value,
                  dtype=np.int64)
    for i, a in enumerate(arrays):
        out[i, ..., :a.shape[-1]] = a
    return torch.as_tensor(out)


def collate(utts, preset, speakers):
    """Pad a list of utterances into a Batch.

    The token layout follows the preset's variant: the first stage of
    the two-stage baseline learns the semantic codes as a single-layer
    grid; the second stage receives the codes, resampled to the audio
    frames, as conditioning.

    Parameters
    ----------
    utts : list of Utterance
        Batch items.
    preset : Preset
        Configuration.
    speakers : ndarray, shape (S, d_speaker)
        Speaker embedding table.

    Returns
    -------
    batch : Batch
        Padded batch with all items conditional.
    """
    if not utts:
        raise ValueError('A batch needs at least one utterance.')

    m = preset.model
    if preset.variant == 'stageA':
        grids = [np.asarray(u.semantic_codes)[None] for u in utts]
    else:
        grids = [u.tokens.tokens for u in utts]
    if any(g.shape[0] != m.K for g in grids):
        raise ValueError('Token grids must have %d layers.' % m.K)

    cond = None
    if m.cond_vocab:
        cond = _pad([nn_interpolate(u.semantic_codes, u.T) for u in utts])

    if preset.train.semantic_target == 'avg':
        feats = [average_layers(u.semantic_feats) for u in utts]
    else:
        feats = [u.semantic_feats for u in utts]

    B = len(utts)
    return Batch(
        uids=[u.uid for u in utts],
        phonemes=_pad([u.phonemes for u in utts]),
        phoneme_lengths=torch.as_tensor([len(u.phonemes) for u in utts]),
        tokens=_pad(grids),
        frame_lengths=torch.as_tensor([g.shape[1] for g in grids]),
        speaker=torch.as_tensor(np.asarray(speakers)[
            [u.speaker_id for u in utts]], dtype=torch.float32),
        semantic_codes=[u.semantic_codes for u in utts],
        semantic_feats=feats,
        cond_codes=cond,
        durations=torch.as_tensor([u.duration_s for u in utts],
                                  dtype=torch.float32),
        uncond=torch.zeros(B, dtype=torch.bool))


def collate_durations(utts):
    """Pad phonemes and durations for the duration predictor."""
    if not utts:
        raise ValueError('A batch needs at least one utterance.')

    return Batch(
        uids=[u.uid for u in utts],
        phonemes=_pad([u.phonemes for u in utts]),
        phoneme_lengths=torch.as_tensor([len(u.phonemes) for u in utts]),
        durations=torch.as_tensor([u.duration_s for u in utts],
                                  dtype=torch.float32))


def apply_cfg_dropout(batch, p, rng):
    """Mark each item unconditional with probability p.

    Only the phoneme conditioning is dropped; speakers are kept.

    Parameters
    ----------
    batch : Batch
        Input batch.
    p : float
        Dropout probability in [0, 1].
    rng : numpy.random.Generator
        Random stream.

    Returns
    -------
    batch : Batch
        Copy of the batch with an updated `uncond` field.
    """
    if not 0 <= p <= 1:
        raise ValueError('Dropout probability must be in [0, 1].')

    drop = torch.as_tensor(rng.random(len(batch)) < p)
    if batch.uncond is not None:
        drop = drop | batch.uncond
    return dataclasses.replace(batch, uncond=drop)


def sample_masks(batch, K, rng):
    """Draw one training mask per item; padding is never masked."""
    T = int(batch.frame_lengths.max())
    masks = np.zeros((len(batch), K, T), dtype=bool)
    for i, n in enumerate(batch.frame_lengths.tolist()):
        masks[i, :, :n] = sample_training_mask(K, n, rng)[0]
    return torch.as_tensor(masks)


def compute_losses(model, batch, masks, cfg):
    """Run the generator on a batch and return the loss breakdown."""
    out = model(batch.phonemes, batch.tokens, masks, batch.speaker,
                phoneme_lengths=batch.phoneme_lengths,
                frame_lengths=batch.frame_lengths, uncond=batch.uncond,
                cond_codes=batch.cond_codes)

    audio = masked_cross_entropy(out.audio_logits, batch.tokens, masks)
    mode = model.cfg.skd_mode
    if mode == 'discrete':
        semantic = semantic_ce(out.semantic_out, batch.semantic_codes,
                               batch.frame_lengths)
    elif mode == 'continuous':
        semantic = semantic_cosine(out.semantic_out, batch.semantic_feats,
                                   batch.frame_lengths)
    else:
        semantic = audio.new_zeros(())

    return combined_loss(audio, semantic, cfg.alpha, cfg.beta,
                         n_masked=int(masks.sum()))


@dataclass
class TrainState:
    """Everything that changes during training."""
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    running: dict = field(default_factory=dict)

    def update_running(self, values, decay=0.9):
        for k, v in values.items():
            old = self.running.get(k)
            self.running[k] = v if old is None else decay * old + \
                (1 - decay) * v


def make_optimizer(model, cfg):
    return torch.optim.AdamW(model.parameters(), lr=lr_at(0, cfg),
                             betas=tuple(cfg.adam_betas),
                             weight_decay=cfg.weight_decay)


def new_state(model, cfg):
    """Return a fresh TrainState for a model."""
    return TrainState(model, make_optimizer(model, cfg),
                      utils.seeded_rng(utils.split(cfg.seed, 'train')))


def _set_lr(state, cfg):
    lr = lr_at(min(state.step, cfg.total_steps), cfg)
    for group in state.optimizer.param_groups:
        group['lr'] = lr
    return lr


def train_step(state, batch, cfg):
    """Perform one optimization step of the generator.

    Conditioning dropout and one training mask per item are drawn from
    the state's random stream, the combined loss is computed (in
    cfg.grad_accum equal shards if requested) and AdamW updates the
    parameters with the learning rate lr_at(step).

    Parameters
    ----------
    state : TrainState
        Training state (updated in place).
    batch : Batch
        Collated batch.
    cfg : TrainConfig
        Optimization hyperparameters.

    Returns
    -------
    losses : LossBreakdown
        Batch losses as floats.

    Raises
    ------
    TrainingAborted
        If the loss is not finite or exceeds cfg.abort_loss.
    """
    if len(batch) == 0:
        raise ValueError('Empty batch.')

    _set_lr(state, cfg)
    batch = apply_cfg_dropout(batch, cfg.cfg_dropout_p, state.rng)
    masks = sample_masks(batch, state.model.cfg.K, state.rng)

    state.model.train()
    state.optimizer.zero_grad()

    B = len(batch)
    totals = np.zeros(3)
    n_masked = 0
    for shard in np.array_split(np.arange(B), cfg.grad_accum):
        if len(shard) == 0:
            continue
        weight = len(shard) / B
        losses = compute_losses(state.model, batch.subset(shard),
                                masks[torch.as_tensor(shard)], cfg)
        (weight * losses.total).backward()

        f = losses.as_floats()
        totals += weight * np.array([f.audio_ce, f.semantic, f.total])
        n_masked += f.n_masked

    result = LossBreakdown(*totals.tolist(), n_masked=n_masked)
    if not np.all(np.isfinite(totals)) or result.total > cfg.abort_loss:
        logger.error('Aborting at step %d: %s', state.step, result)
        raise TrainingAborted(state.step, result, batch.uids)

    state.optimizer.step()
    state.step += 1
    state.update_running({'audio_ce': result.audio_ce,
                          'semantic': result.semantic,
                          'total': result.total})
    return result


def duration_step(state, batch, cfg):
    """Perform one optimization step of the duration predictor.

    Returns the Huber loss of the batch as a float.
    """
    if len(batch) == 0:
        raise ValueError('Empty batch.')

    _set_lr(state, cfg)
    state.model.train()
    state.optimizer.zero_grad()

    pred = state.model(batch.phonemes, batch.phoneme_lengths)
    loss = huber_log_duration(pred, batch.durations, cfg.huber_delta)
    loss.backward()

    value = float(loss)
    if not math.isfinite(value) or value > cfg.abort_loss:
        logger.error('Aborting at step %d: loss %r', state.step, value)
        raise TrainingAborted(state.step, value, batch.uids)

    state.optimizer.step()
    state.step += 1
    state.update_running({'huber': value})
    return value


class BucketSampler(object):
    """Draw batches of utterances of similar length.

    Utterances are sorted by length and cut into buckets of
    bucket_factor * batch_size items.  A batch is drawn by picking a
    bucket (with probability proportional to its size) and sampling
    batch_size of its items without replacement.
    """

    def __init__(self, lengths, batch_size, bucket_factor=4):
        order = np.argsort(np.asarray(lengths), kind='stable')
        size = batch_size * bucket_factor
        self.batch_size = batch_size
        self.buckets = [order[i:i + size]
                        for i in range(0, len(order), size)]
        sizes = np.array([len(b) for b in self.buckets], dtype=float)
        self.weights = sizes / sizes.sum()

    def sample(self, rng):
        bucket = self.buckets[rng.choice(len(self.buckets), p=self.weights)]
        k = min(self.batch_size, len(bucket))
        return np.sort(rng.choice(bucket, size=k, replace=False))


def params_digest(model):
    """Return a hex digest of a model's parameters."""
    return utils.digest(v.detach().cpu().numpy()
                        for v in model.state_dict().values())


def save_checkpoint(path, state, preset, world=None, kind='generator'):
    """Write a checkpoint.

    The file holds the model and optimizer states, the step, the random
    stream and the configuration echo, and is written atomically.

    Parameters
    ----------
    path : str or path-like
        Output file.
    state : TrainState
        Training state.
    preset : Preset
        Configuration of the run.
    world : ToyWorldSpec, optional
        Synthetic world the run was trained on.
    kind : str, optional (default = 'generator')
        Either "generator" or "duration".
    """
    payload = {
        'format_version': FORMAT_VERSION,
        'kind': kind,
        'preset': preset.to_dict(),
        'world': None if world is None else dataclasses.asdict(world),
        'model': state.model.state_dict(),
        'optimizer': state.optimizer.state_dict(),
        'step': state.step,
        'rng': state.rng.bit_generator.state,
        'running': dict(state.running),
        'digest': params_digest(state.model),
    }

    tmp = '%s.tmp' % path
    torch.save(payload, tmp)
    os.replace(tmp, path)
    logger.info('Saved %s checkpoint at step %d to %s', kind, state.step,
                path)


@dataclass
class Checkpoint:
    """A loaded checkpoint."""
    kind: str
    preset: object
    world: ToyWorldSpec
    state: TrainState

    @property
    def model(self):
        return self.state.model


def world_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    if 'phonemes_per_utt' in d:
        d['phonemes_per_utt'] = tuple(d['phonemes_per_utt'])
    return ToyWorldSpec(**d)


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint().

    Returns
    -------
    ckpt : Checkpoint
        Kind, configuration, world and a TrainState that continues the
        run exactly where it stopped.
    """
    payload = torch.load(path, map_location='cpu', weights_only=False)
    version = payload.get('format_version')
    if version != FORMAT_VERSION:
        raise ValueError('%s: unsupported checkpoint format %r.'
                         % (path, version))

    kind = payload['kind']
    preset = preset_from_dict(payload['preset'])
    if kind == 'duration':
        model = build_model(preset.duration)
        cfg = preset.duration_train
    else:
        model = build_model(preset.model)
        cfg = preset.train

    model.load_state_dict(payload['model'])
    optimizer = make_optimizer(model, cfg)
    optimizer.load_state_dict(payload['optimizer'])

    rng = utils.seeded_rng(0)
    rng.bit_generator.state = payload['rng']

    state = TrainState(model, optimizer, rng, int(payload['step']),
                       dict(payload.get('running', {})))
    logger.debug('Loaded %s checkpoint %s at step %d', kind, path,
                 state.step)
    return Checkpoint(kind, preset, world_from_dict(payload['world']), state)


class MetricsLog(object):
    """CSV metrics log that survives resumes.

    On resume, rows written after the checkpoint step are dropped.
    """

    def __init__(self, path, fields, step=0):
        rows = []
        if step > 0 and os.path.exists(path):
            with open(path) as fp:
                rows = [r for r in csv.DictReader(fp)
                        if int(r['step']) <= step]

        self.fp = open(path, 'w', newline='')
        self.writer = csv.DictWriter(self.fp, fieldnames=fields)
        self.writer.writeheader()
        self.writer.writerows(rows)
        self.fp.flush()

    def write(self, row):
        self.writer.writerow(row)
        self.fp.flush()

    def close(self):
        self.fp.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _training_split(corpus):
    if any(u.split == 'test' for u in corpus):
        raise ValueError('Training must not read the test split.')
    train = [u for u in corpus if u.split == 'train']
    if not train:
        raise ValueError('The corpus has no training utterances.')
    return train


def _resume(out_dir, resume, kind):
    last = os.path.join(out_dir, 'last.pt')
    if not (resume and os.path.exists(last)):
        return None
    ckpt = load_checkpoint(last)
    if ckpt.kind != kind:
        raise ValueError('%s holds a %s checkpoint.' % (last, ckpt.kind))
    logger.info('Resuming from %s at step %d', last, ckpt.state.step)
    return ckpt.state


def fit(corpus, preset, out_dir, world, resume=True, progress=None):
    """Train the generator.

    Parameters
    ----------
    corpus : list of Utterance
        Training corpus.  Only the train split is used; test utterances
        are rejected.
    preset : Preset
        Configuration (variant already applied).
    out_dir : str or path-like
        Directory for checkpoints and metrics.csv.
    world : ToyWorldSpec
        Synthetic world (provides the speaker embeddings).
    resume : bool, optional (default = True)
        Continue from out_dir/last.pt if it exists.
    progress : bool, optional (default = None)
        Show a progress bar (None: only on a terminal).

    Returns
    -------
    path : str
        Path of the last checkpoint.
    """
    preset.validate()
    cfg = preset.train
    train = _training_split(corpus)
    speakers = speaker_table(world)

    os.makedirs(out_dir, exist_ok=True)
    state = _resume(out_dir, resume, 'generator')
    if state is None:
        state = new_state(build_model(preset.model, cfg.seed), cfg)

    logger.info('Training %s/%s generator on %d utterances for %d steps',
                preset.name, preset.variant, len(train), cfg.total_steps)

    last = os.path.join(out_dir, 'last.pt')
    sampler = BucketSampler([u.T for u in train], cfg.batch_size)

    with MetricsLog(os.path.join(out_dir, 'metrics.csv'), METRICS_FIELDS,
                    state.step) as metrics, \
            tqdm(total=cfg.total_steps, initial=state.step,
                 disable=(None if progress is None else not progress)) as bar:
        while state.step < cfg.total_steps:
            index = sampler.sample(state.rng)
            batch = collate([train[i] for i in index], preset, speakers)
            lr = lr_at(state.step, cfg)
            losses = train_step(state, batch, cfg)
            bar.update(1)

            if state.step % cfg.log_interval == 0:
                metrics.write({'step': state.step, 'lr': lr,
                               'audio_ce': losses.audio_ce,
                               'semantic': losses.semantic,
                               'total': losses.total})
                bar.set_postfix(loss='%.4f' % state.running['total'])
                logger.info('step %d lr %.3g audio %.4f semantic %.4f '
                            'total %.4f', state.step, lr, losses.audio_ce,
                            losses.semantic, losses.total)

            if state.step % cfg.checkpoint_interval == 0:
                save_checkpoint(os.path.join(out_dir, 'step_%07d.pt'
                                             % state.step),
                                state, preset, world)
                save_checkpoint(last, state, preset, world)

    save_checkpoint(last, state, preset, world)
    return last


def fit_duration(corpus, preset, out_dir, world=None, resume=True,
                 progress=None):
    """Train the duration predictor.

    Same loop as fit() with the Huber loss on log-seconds and the
    duration_train configuration.  The output bias starts at the mean
    log-duration of the corpus.

    Returns
    -------
    path : str
        Path of the last checkpoint.
    """
    preset.validate()
    cfg = preset.duration_train
    train = _training_split(corpus)

    os.makedirs(out_dir, exist_ok=True)
    state = _resume(out_dir, resume, 'duration')
    if state is None:
        model = build_model(preset.duration, cfg.seed)
        with torch.no_grad():
            model.out.bias.fill_(float(np.mean(
                np.log([u.duration_s for u in train]))))
        state = new_state(model, cfg)

    logger.info('Training duration predictor on %d utterances for %d steps',
                len(train), cfg.total_steps)

    last = os.path.join(out_dir, 'last.pt')
    sampler = BucketSampler([len(u.phonemes) for u in train], cfg.batch_size)

    with MetricsLog(os.path.join(out_dir, 'metrics.csv'), DURATION_FIELDS,
                    state.step) as metrics, \
            tqdm(total=cfg.total_steps, initial=state.step,
                 disable=(None if progress is None else not progress)) as bar:
        while state.step < cfg.total_steps:
            index = sampler.sample(state.rng)
            batch = collate_durations([train[i] for i in index])
            lr = lr_at(state.step, cfg)
            loss = duration_step(state, batch, cfg)
            bar.update(1)

            if state.step % cfg.log_interval == 0:
                metrics.write({'step': state.step, 'lr': lr, 'huber': loss})
                bar.set_postfix(loss='%.4f' % state.running['huber'])
                logger.info('step %d lr %.3g huber %.4f', state.step, lr,
                            loss)

            if state.step % cfg.checkpoint_interval == 0:
                save_checkpoint(last, state, preset, world, kind='duration')

    save_checkpoint(last, state, preset, world, kind='duration')
    return last
