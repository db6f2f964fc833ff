# -*- coding: utf-8 -*-

from __future__ import absolute_import, division, print_function

import json

from dataclasses import fields, replace

from maskspeech import config
from maskspeech.config import ConfigError
from numpy.testing import assert_, assert_allclose, assert_equal, assert_raises


def test_presets():
    # Test config.preset()
    toy = config.preset('toy')
    assert_equal((toy.model.K, toy.model.V, toy.model.P), (4, 64, 16))
    assert_equal(toy.train.batch_size, 16)
    assert_(toy.train.total_steps <= 5000)
    assert_equal(toy.duration_train.total_steps, 2000)

    paper = config.preset('paper')
    assert_equal((paper.model.K, paper.model.V), (9, 1024))
    assert_equal((paper.model.d_model, paper.model.n_layers,
                  paper.model.n_heads), (1024, 16, 16))
    assert_equal(paper.train.lr_peak, 1e-4)
    assert_equal(paper.train.lr_final, 5e-7)
    assert_equal(paper.train.warmup_steps, 2000)
    assert_equal(paper.train.total_steps, 700000)
    assert_equal(paper.train.batch_size, 64)
    assert_equal(paper.train.adam_betas, (0.9, 0.999))
    assert_equal(paper.train.weight_decay, 0.0)
    assert_equal(paper.duration_train.lr_peak, 1e-3)
    assert_equal(paper.duration_train.total_steps, 20000)
    assert_equal(paper.sampler.n_steps, 20)

    assert_equal(config.preset('full'), paper)
    assert_raises(ConfigError, config.preset, 'huge')


def test_frame_rate():
    # DAC at 44.1 kHz with stride 512.
    assert_allclose(config.FRAME_RATE_HZ, 86.1328125, rtol=0, atol=1e-12)


class TestVariants(object):
    # Test config.variant()

    def test_weights(self):
        base = config.preset('toy')
        table = {'base': ('none', 1.0, 0.0), 'codes': ('discrete', 0.95, 0.05),
                 'feats': ('continuous', 0.5, 0.5),
                 'avg': ('continuous', 0.5, 0.5)}
        for name, (mode, alpha, beta) in table.items():
            p = config.variant(base, name)
            assert_equal(p.variant, name)
            assert_equal(p.model.skd_mode, mode)
            assert_equal((p.train.alpha, p.train.beta), (alpha, beta))

        assert_equal(config.variant(base, 'feats').train.semantic_target,
                     'feats')
        assert_equal(config.variant(base, 'avg').train.semantic_target,
                     'avg')

    def test_only_skd_fields_differ(self):
        # The four single-stage variants share the network topology.
        base = config.preset('toy')
        variants = [config.variant(base, n)
                    for n in ('base', 'codes', 'feats', 'avg')]
        for p in variants:
            for f in fields(p.model):
                if f.name != 'skd_mode':
                    assert_equal(getattr(p.model, f.name),
                                 getattr(base.model, f.name))
            for f in fields(p.train):
                if f.name not in ('alpha', 'beta', 'semantic_target'):
                    assert_equal(getattr(p.train, f.name),
                                 getattr(base.train, f.name))
            assert_equal(p.sampler, base.sampler)

    def test_stages(self):
        base = config.preset('toy')
        a = config.variant(base, 'stageA')
        assert_equal((a.model.K, a.model.V), (1, base.model.C))
        assert_equal(a.model.frame_rate_hz, base.model.semantic_rate_hz)

        b = config.variant(base, 'stageB')
        assert_equal(b.model.cond_vocab, base.model.C)
        assert_equal(b.model.K, base.model.K)

    def test_unknown(self):
        assert_raises(ConfigError, config.variant, config.preset(), 'best')


class TestValidate(object):

    def test_model(self):
        m = config.ModelConfig()
        assert_raises(ConfigError, replace(m, skd_mode='both').validate)
        assert_raises(ConfigError, replace(m, n_heads=3).validate)
        assert_raises(ConfigError, replace(m, V=0).validate)

    def test_train(self):
        t = config.TrainConfig()
        assert_raises(ConfigError, replace(t, alpha=0, beta=0).validate)
        assert_raises(ConfigError, replace(t, cfg_dropout_p=1.5).validate)
        assert_raises(ConfigError, replace(t, warmup_steps=5000).validate)
        assert_raises(ConfigError, replace(t, grad_accum=3).validate)

    def test_sampler(self):
        s = config.SamplerConfig()
        assert_raises(ConfigError, replace(s, n_steps=0).validate)
        assert_raises(ConfigError, replace(s, noise_var_end=4.0).validate)


class TestLoadConfig(object):
    # Test config.load_config()

    def test_override(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text(json.dumps({'variant': 'codes', 'd_model': 64,
                                    'seed': 5, 'n_steps': 8,
                                    'duration_lr_peak': 0.01,
                                    'duration_d_model': 32}))
        p = config.load_config(str(path))
        assert_equal(p.name, 'toy')
        assert_equal(p.variant, 'codes')
        assert_equal(p.model.d_model, 64)
        assert_equal(p.train.seed, 5)
        assert_equal(p.sampler.seed, 5)
        assert_equal(p.sampler.n_steps, 8)
        assert_equal(p.duration_train.lr_peak, 0.01)
        assert_equal(p.duration.d_model, 32)
        assert_equal(p.train.lr_peak, config.preset('toy').train.lr_peak)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text(json.dumps({'d_modle': 64}))
        assert_raises(ConfigError, config.load_config, str(path))

    def test_bad_documents(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text('[1, 2]')
        assert_raises(ConfigError, config.load_config, str(path))

        path.write_text('{not json')
        assert_raises(ConfigError, config.load_config, str(path))

    def test_integer_coercion(self):
        p = config.from_dict({'total_steps': 300.0})
        assert_equal(p.train.total_steps, 300)
        assert_(isinstance(p.train.total_steps, int))
        assert_raises(ConfigError, config.from_dict, {'total_steps': 1.5})

    def test_shared_alphabet(self):
        p = config.from_dict({'P': 20})
        assert_equal((p.model.P, p.duration.P), (20, 20))

        assert_raises(ConfigError, config.from_dict,
                      {'P': 20, 'duration_P': 16})
        assert_raises(ConfigError, config.from_dict, {'duration_P': 20})


def test_preset_round_trip():
    # Test config.preset_from_dict()
    p = config.variant(config.preset('paper'), 'feats')
    q = config.preset_from_dict(json.loads(json.dumps(p.to_dict())))
    assert_equal(q, p)
