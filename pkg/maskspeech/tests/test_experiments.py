# -*- coding: utf-8 -*-

"""End-to-end training experiments on the toy world.

These train real models for thousands of steps and take tens of minutes
on a CPU.  They only run when MASKSPEECH_SLOW is set.
"""

from __future__ import absolute_import, division, print_function

import csv
import math
import os

from dataclasses import replace

import numpy as np
import pytest

from maskspeech import config, data, evaluate, network, trainer, utils
from maskspeech.config import SamplerConfig
from maskspeech.evaluate import Pipeline
from numpy.testing import assert_

pytestmark = pytest.mark.skipif(not os.environ.get('MASKSPEECH_SLOW'),
                                reason='set MASKSPEECH_SLOW to run')


def _train(corpus, world, out, name, seed=0, steps=5000):
    p = config.variant(config.preset('toy'), name)
    p = replace(p, train=replace(p.train, seed=seed, total_steps=steps))
    return trainer.load_checkpoint(trainer.fit(corpus, p, out, world,
                                               progress=False))


def _fit(corpus, world, out, name, seed=0, steps=5000):
    ckpt = _train(corpus, world, out, name, seed, steps)
    return Pipeline(name, ckpt.preset, ckpt.model)


@pytest.fixture(scope='module')
def world():
    return data.ToyWorldSpec(n_utterances=64).validate()


@pytest.fixture(scope='module')
def corpus(world):
    return data.gen_corpus(world, 'train')


@pytest.fixture(scope='module')
def overfit(tmp_path_factory, corpus, world):
    return _fit(corpus, world, str(tmp_path_factory.mktemp('base')), 'base')


def _decode_scores(pipeline, utts, world, speaker_of=None, seed=0):
    cfg = SamplerConfig()
    pers, cons = [], []
    for utt in utts:
        s = utt.speaker_id if speaker_of is None else speaker_of(utt)
        rng = utils.seeded_rng(utils.split(seed, 'eval', utt.uid))
        grid, _ = pipeline.decode(utt.phonemes,
                                  data.toy_speaker_embedding(s, world),
                                  utt.T, cfg, rng)
        per, consistency = evaluate.score_grid(grid, utt, world)
        pers.append(per)
        cons.append(data.oracle_speaker_consistency(grid, utt.speaker_id,
                                                    world))
    return float(np.mean(pers)), float(np.mean(cons))


def test_overfit(overfit, corpus, world):
    accuracy = evaluate.masked_accuracy(overfit.model, corpus, overfit.preset,
                                        world)
    assert_(accuracy >= 0.95)

    per, _ = _decode_scores(overfit, corpus[:16], world)
    assert_(per <= 0.05)


def test_speaker_conditioning(overfit, corpus, world):
    utts = corpus[:16]
    _, matched = _decode_scores(overfit, utts, world)
    assert_(matched >= 0.9)

    for shift in range(1, world.S):
        _, mismatched = _decode_scores(
            overfit, utts, world,
            speaker_of=lambda u: (u.speaker_id + shift) % world.S)
        assert_(matched > mismatched)


def test_semantic_distillation(tmp_path):
    # Distillation helps on unseen phoneme sequences.
    world = data.ToyWorldSpec(n_utterances=256).validate()
    train = data.gen_corpus(world, 'train')
    test = data.gen_corpus(world, 'test', n=64)

    scores = {'base': [], 'feats': []}
    for seed in range(3):
        for name in scores:
            out = str(tmp_path / ('%s-%d' % (name, seed)))
            pipeline = _fit(train, world, out, name, seed=seed)
            scores[name].append(_decode_scores(pipeline, test, world,
                                               seed=seed)[0])
    assert_(np.mean(scores['feats']) <= np.mean(scores['base']))

    p = config.variant(config.preset('toy'), 'codes')
    state = trainer.new_state(network.build_model(p.model), p.train)
    batch = trainer.collate(train[:16], p, data.speaker_table(world))
    for _ in range(20):
        losses = trainer.train_step(state, batch, p.train)
    assert_(math.isfinite(losses.total))
    assert_(losses.audio_ce > 0 and losses.semantic > 0)


def test_duration(tmp_path, corpus, world):
    p = config.preset('toy')
    path = trainer.fit_duration(corpus, p, str(tmp_path), world,
                                progress=False)
    model = trainer.load_checkpoint(path).model
    assert_(evaluate.duration_error(model, corpus) <= 0.05)
    assert_(network.predicted_frames(math.log(4.0),
                                     config.FRAME_RATE_HZ) == 345)

    # Mean loss over consecutive 100-step windows never goes up by more
    # than minibatch noise.
    with open(str(tmp_path / 'metrics.csv')) as fp:
        rows = list(csv.DictReader(fp))
    per_window = 100 // p.duration_train.log_interval
    huber = np.array([float(r['huber']) for r in rows])
    n = len(huber) // per_window
    windows = huber[:n * per_window].reshape(n, per_window).mean(axis=1)
    assert_(n >= 2)
    assert_(np.all(windows[1:] <= 1.1 * windows[:-1] + 1e-3))


def test_two_stage(tmp_path):
    # The two-stage baseline is no worse than a single-stage model
    # without distillation once both are overfit.
    world = data.ToyWorldSpec(n_utterances=256).validate()
    train = data.gen_corpus(world, 'train')
    test = data.gen_corpus(world, 'test', n=64)

    one = _fit(train, world, str(tmp_path / 'base'), 'base')
    a = _train(train, world, str(tmp_path / 'a'), 'stageA')
    b = _train(train, world, str(tmp_path / 'b'), 'stageB')
    two = Pipeline('two-stage', b.preset, a.model, b.model)

    per_one, _ = _decode_scores(one, test, world)
    per_two, _ = _decode_scores(two, test, world)
    assert_(per_two <= per_one)


def test_efficiency(world):
    base = config.preset('toy')
    one = Pipeline('base', base, network.build_model(base.model))
    a = config.variant(base, 'stageA')
    b = config.variant(base, 'stageB')
    two = Pipeline('two-stage', b, network.build_model(a.model, 1),
                   network.build_model(b.model, 2))

    report = evaluate.bench(one, two, world, base.sampler, n_runs=3)
    assert_(report.pass_ratios == [2.0] * 4)
    for row in report.rows:
        assert_(row.one_stage_s < row.two_stage_s)
