# -*- coding: utf-8 -*-

"""Evaluation and benchmarking.

Intelligibility and speaker similarity of generated token grids are
measured with the oracles of the synthetic world: the phoneme error
rate of the decoded phonemes and the fraction of frames that carry the
target speaker's fingerprint.

  * phoneme_error_rate -- normalized edit distance.
  * score_grid -- oracle scores of one generated grid.
  * masked_accuracy -- token accuracy at randomly masked cells.
  * duration_error -- median relative error of the duration predictor.
  * load_pipeline -- one- or two-stage generator from checkpoints.
  * evaluate -- decodes a test split and reports the scores.
  * bench -- forward passes and wall-clock time of two pipelines.
"""

from __future__ import absolute_import, division, print_function

import csv
import logging
import time

from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from . import utils
from .data import (enrollment_average, oracle_decode_phonemes,
                   oracle_speaker_consistency, random_phonemes,
                   speaker_table, toy_speaker_embedding)
from .network import duration_forward, predicted_frames
from .sampler import decode, decode_two_stage
from .trainer import collate, load_checkpoint, sample_masks

logger = logging.getLogger(__name__)

BENCH_DURATIONS = (4, 8, 12, 16)


def phoneme_error_rate(hyp, ref):
    """Return the phoneme error rate of a hypothesis.

    Parameters
    ----------
    hyp : array_like
        Decoded phonemes.
    ref : array_like
        Reference phonemes (nonempty).

    Returns
    -------
    per : float
        Levenshtein distance divided by the reference length.
    """
    ref = np.asarray(ref, dtype=np.int64).ravel()
    if len(ref) == 0:
        raise ValueError('Reference must be nonempty.')
    return utils.levenshtein(hyp, ref) / len(ref)


def score_grid(grid, utt, world):
    """Return (PER, speaker consistency) of a grid generated for utt."""
    hyp = oracle_decode_phonemes(grid, world.P)
    return (phoneme_error_rate(hyp, utt.phonemes),
            oracle_speaker_consistency(grid, utt.speaker_id, world))


def masked_accuracy(model, utts, preset, world, seed=0, batch_size=16):
    """Return the token accuracy at randomly masked cells.

    Each utterance gets one training mask; the accuracy is pooled over
    all masked cells of all utterances.
    """
    rng = utils.seeded_rng(utils.split(seed, 'accuracy'))
    speakers = speaker_table(world)
    model.eval()

    correct = total = 0
    for i in range(0, len(utts), batch_size):
        batch = collate(utts[i:i + batch_size], preset, speakers)
        masks = sample_masks(batch, model.cfg.K, rng)
        with torch.no_grad():
            out = model(batch.phonemes, batch.tokens, masks, batch.speaker,
                        phoneme_lengths=batch.phoneme_lengths,
                        frame_lengths=batch.frame_lengths,
                        cond_codes=batch.cond_codes)
        pred = out.audio_logits.argmax(dim=-1)
        correct += int(((pred == batch.tokens) & masks).sum())
        total += int(masks.sum())

    return correct / total


def duration_error(model, utts):
    """Return the median of |predicted - true| / true durations."""
    errors = [abs(np.exp(duration_forward(u.phonemes, model)) -
                  u.duration_s) / u.duration_s for u in utts]
    return float(np.median(errors))


@dataclass
class Pipeline:
    """A generator: a single model, or the two stages of the baseline."""
    name: str
    preset: object
    model: torch.nn.Module
    stage_b: torch.nn.Module = None

    @property
    def skd_mode(self):
        if self.stage_b is not None:
            return 'two-stage'
        return self.preset.model.skd_mode

    @property
    def acoustic(self):
        return self.model if self.stage_b is None else self.stage_b

    def decode(self, phonemes, speaker, T, cfg, rng):
        if self.stage_b is None:
            return decode(self.model, phonemes, speaker, T, cfg, rng)
        return decode_two_stage(self.model, self.stage_b, phonemes, speaker,
                                T, cfg, rng)


def load_pipeline(path, stage_b=None, name=None):
    """Load a pipeline from a generator checkpoint.

    Parameters
    ----------
    path : str
        Generator checkpoint (the semantic stage if stage_b is given).
    stage_b : str, optional
        Checkpoint of the acoustic stage of the two-stage baseline.
    name : str, optional
        Report name (default: the variant, or "two-stage").

    Returns
    -------
    pipeline : Pipeline
        Loaded pipeline.
    world : ToyWorldSpec
        World stored with the (acoustic) checkpoint.
    """
    first = load_checkpoint(path)
    if first.kind != 'generator':
        raise ValueError('%s is not a generator checkpoint.' % path)

    if stage_b is None:
        return (Pipeline(name or first.preset.variant, first.preset,
                         first.model), first.world)

    second = load_checkpoint(stage_b)
    if first.preset.variant != 'stageA' or second.preset.variant != 'stageB':
        raise ValueError('Two-stage pipelines need a stageA and a stageB '
                         'checkpoint.')
    return (Pipeline(name or 'two-stage', second.preset, first.model,
                     second.model), second.world)


@dataclass
class EvalRow:
    variant: str
    skd_mode: str
    length_mode: str
    per: float
    speaker_consistency: float
    duration_error: float
    forward_passes: float
    n_utts: int


def _to_csv(rows, cls, path):
    with open(path, 'w', newline='') as fp:
        writer = csv.DictWriter(fp, fieldnames=[f.name for f in fields(cls)])
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def _table(rows, columns):
    header = [c for c, _ in columns]
    body = [[fmt % getattr(row, c) if fmt else str(getattr(row, c))
             for c, fmt in columns] for row in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]

    lines = ['  '.join(x.ljust(w) for x, w in zip(header, widths))]
    lines.append('  '.join('-' * w for w in widths))
    lines.extend('  '.join(x.ljust(w) for x, w in zip(line, widths))
                 for line in body)
    return "\n".join(lines)


@dataclass
class EvalReport:
    """Scores of one or more pipelines on a test split."""
    rows: list = field(default_factory=list)

    def to_csv(self, path):
        _to_csv(self.rows, EvalRow, path)

    def format_table(self):
        return _table(self.rows, [('variant', None), ('skd_mode', None),
                                  ('length_mode', None), ('per', '%.4f'),
                                  ('speaker_consistency', '%.4f'),
                                  ('duration_error', '%.4f'),
                                  ('forward_passes', '%.1f'),
                                  ('n_utts', '%d')])


def _enrollment(speaker_id, train, world, seed, n=3):
    pool = [u for u in train if u.speaker_id == speaker_id]
    if not pool:
        raise ValueError('No enrollment utterances for speaker %d.'
                         % speaker_id)

    rng = utils.seeded_rng(utils.split(seed, 'enroll', int(speaker_id)))
    chosen = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
    return enrollment_average([toy_speaker_embedding(pool[i].speaker_id,
                                                     world)
                               for i in chosen])


def evaluate(pipelines, test, train, world, sampler_cfg, duration_model=None,
             length_modes=None, seed=0):
    """Decode a test split with each pipeline and score the results.

    Parameters
    ----------
    pipelines : list of Pipeline
        Generators to evaluate (one report row per pipeline and length
        mode).
    test : list of Utterance
        Utterances whose phonemes and speakers are the prompts.
    train : list of Utterance
        Enrollment pool (3 utterances per target speaker).
    world : ToyWorldSpec
        Synthetic world.
    sampler_cfg : SamplerConfig
        Decoding hyperparameters.
    duration_model : DurationPredictor, optional
        Needed for the "predicted" length mode.
    length_modes : sequence of str, optional
        Subset of ("oracle", "predicted").  By default, "oracle", plus
        "predicted" when a duration model is given.
    seed : int, optional (default = 0)
        Evaluation seed.  Each utterance decodes with the substream
        split(seed, "eval", uid).

    Returns
    -------
    report : EvalReport
        One row per pipeline and length mode.
    """
    if length_modes is None:
        length_modes = ('oracle',) if duration_model is None else \
            ('oracle', 'predicted')
    for mode in length_modes:
        if mode not in ('oracle', 'predicted'):
            raise ValueError('Unknown length mode %r.' % mode)
        if mode == 'predicted' and duration_model is None:
            raise ValueError('Predicted lengths need a duration model.')
    if not test:
        raise ValueError('Nothing to evaluate.')

    speakers = {}
    report = EvalReport()
    for pipeline in pipelines:
        acoustic = pipeline.acoustic.cfg
        for mode in length_modes:
            pers, cons, derr, passes = [], [], [], []
            for utt in test:
                if utt.speaker_id not in speakers:
                    speakers[utt.speaker_id] = _enrollment(
                        utt.speaker_id, train, world, seed)

                if mode == 'oracle':
                    T = utt.T
                else:
                    log_s = duration_forward(utt.phonemes, duration_model)
                    T = min(predicted_frames(log_s, acoustic.frame_rate_hz),
                            acoustic.max_frames)

                child = utils.split(seed, 'eval', utt.uid)
                logger.debug('%s/%s: decoding %s with seed %d (%d frames)',
                             pipeline.name, mode, utt.uid, child, T)
                grid, trace = pipeline.decode(utt.phonemes,
                                              speakers[utt.speaker_id], T,
                                              sampler_cfg,
                                              utils.seeded_rng(child))

                per, consistency = score_grid(grid, utt, world)
                pers.append(per)
                cons.append(consistency)
                derr.append(abs(T - utt.T) / utt.T)
                passes.append(trace.forward_passes)

            row = EvalRow(pipeline.name, pipeline.skd_mode, mode,
                          float(np.mean(pers)), float(np.mean(cons)),
                          float(np.mean(derr)), float(np.mean(passes)),
                          len(test))
            logger.info('%s/%s: PER %.4f consistency %.4f', row.variant,
                        mode, row.per, row.speaker_consistency)
            report.rows.append(row)

    return report


@dataclass
class BenchRow:
    duration_s: float
    frames: int
    one_stage_s: float
    two_stage_s: float
    one_stage_passes: int
    two_stage_passes: int


@dataclass
class BenchReport:
    """Median wall-clock time and forward passes per duration bucket."""
    rows: list = field(default_factory=list)
    n_runs: int = 0

    @property
    def pass_ratios(self):
        return [r.two_stage_passes / r.one_stage_passes for r in self.rows]

    def to_csv(self, path):
        _to_csv(self.rows, BenchRow, path)

    def format_table(self):
        return _table(self.rows, [('duration_s', '%g'), ('frames', '%d'),
                                  ('one_stage_s', '%.4f'),
                                  ('two_stage_s', '%.4f'),
                                  ('one_stage_passes', '%d'),
                                  ('two_stage_passes', '%d')])


def _timed(pipeline, phonemes, speaker, T, cfg, seeds):
    times = []
    for s in seeds:
        rng = utils.seeded_rng(s)
        start = time.perf_counter()
        _, trace = pipeline.decode(phonemes, speaker, T, cfg, rng)
        times.append(time.perf_counter() - start)
    return float(np.median(times)), trace.forward_passes


def bench(one_stage, two_stage, world, sampler_cfg,
          durations=BENCH_DURATIONS, n_runs=20, seed=0):
    """Compare the decoding cost of a one-stage and a two-stage pipeline.

    For each duration, a random prompt of matching length is decoded
    n_runs times by both pipelines.

    Parameters
    ----------
    one_stage : Pipeline
        Single-stage generator.
    two_stage : Pipeline
        Two-stage baseline.
    world : ToyWorldSpec
        Synthetic world (phoneme lengths and speakers).
    sampler_cfg : SamplerConfig
        Decoding hyperparameters (shared by both pipelines).
    durations : sequence of float, optional
        Durations in seconds (default: 4, 8, 12 and 16).
    n_runs : int, optional (default = 20)
        Runs per pipeline and duration.
    seed : int, optional (default = 0)
        Benchmark seed.

    Returns
    -------
    report : BenchReport
        One row per duration.
    """
    if n_runs < 1:
        raise ValueError('n_runs must be at least 1.')
    if two_stage.stage_b is None or one_stage.stage_b is not None:
        raise ValueError('Expected a one-stage and a two-stage pipeline.')

    cfg = one_stage.acoustic.cfg
    speaker = toy_speaker_embedding(0, world)
    mean_len = world.phoneme_len_base + 1.5

    report = BenchReport(n_runs=n_runs)
    for d in durations:
        T = utils.round_half(d * cfg.frame_rate_hz)
        n = min(max(1, utils.round_half(T / mean_len)), cfg.max_phonemes)
        phonemes = random_phonemes(n, world.P, utils.seeded_rng(
            utils.split(seed, 'bench', 'prompt', d)))
        seeds = [utils.split(seed, 'bench', d, r) for r in range(n_runs)]

        t1, p1 = _timed(one_stage, phonemes, speaker, T, sampler_cfg, seeds)
        t2, p2 = _timed(two_stage, phonemes, speaker, T, sampler_cfg, seeds)
        if p2 != 2 * p1:
            raise RuntimeError('Forward pass ratio is %g, expected 2.'
                               % (p2 / p1))

        logger.info('%gs (%d frames): one-stage %.4fs, two-stage %.4fs',
                    d, T, t1, t2)
        report.rows.append(BenchRow(d, T, t1, t2, p1, p2))

    return report
