# -*- coding: utf-8 -*-

from __future__ import absolute_import, division, print_function

from dataclasses import replace

import numpy as np
import pytest

from maskspeech import network, sampler, utils
from maskspeech.config import ModelConfig, SamplerConfig
from numpy.testing import assert_, assert_allclose, assert_equal, assert_raises


def _tiny(**kwargs):
    cfg = ModelConfig(K=2, V=8, P=5, S=3, d_model=16, n_layers=1, n_heads=2,
                      d_ff=32, C=4, d_speaker=4, max_frames=64,
                      max_phonemes=16)
    return replace(cfg, **kwargs).validate()


@pytest.fixture(scope='module')
def model():
    return network.build_model(_tiny(), seed=0)


SPEAKER = np.array([0.5, -0.5, 0.5, 0.5])


class TestSchedules(object):
    # Test sampler.guidance_level() and sampler.noise_variance()

    def test_guidance(self):
        cfg = SamplerConfig()
        assert_allclose(sampler.guidance_level(0, 20, cfg), 3.0)
        assert_allclose(sampler.guidance_level(19, 20, cfg), 0.75)
        assert_allclose(sampler.guidance_level(10, 20, cfg), 1.81579,
                        atol=1e-5)

        w = [sampler.guidance_level(i, 20, cfg) for i in range(20)]
        assert_allclose(np.diff(w), -2.25 / 19)

    def test_noise(self):
        cfg = SamplerConfig()
        assert_allclose(sampler.noise_variance(0, 20, cfg), 3.0)
        assert_allclose(sampler.noise_variance(19, 20, cfg), 0.0)
        assert_allclose(sampler.noise_variance(10, 20, cfg), 1.42105,
                        atol=1e-5)

    def test_single_step(self):
        cfg = SamplerConfig()
        assert_equal(sampler.guidance_level(0, 1, cfg), 3.0)
        assert_equal(sampler.noise_variance(0, 1, cfg), 0.0)

    def test_range(self):
        cfg = SamplerConfig()
        assert_raises(ValueError, sampler.guidance_level, 20, 20, cfg)
        assert_raises(ValueError, sampler.noise_variance, -1, 20, cfg)


def test_cfg_combine():
    # Test sampler.cfg_combine()
    rng = utils.seeded_rng(0)
    cond = rng.standard_normal((2, 3, 4))
    uncond = rng.standard_normal((2, 3, 4))

    assert_equal(sampler.cfg_combine(cond, uncond, 1), cond)
    assert_equal(sampler.cfg_combine(cond, uncond, 0), uncond)
    assert_allclose(sampler.cfg_combine(cond, uncond, 3),
                    3 * cond - 2 * uncond)
    assert_equal(sampler.cfg_combine(cond, cond, 2.5), cond)

    out = sampler.cfg_combine(cond, uncond, 1)
    out[0, 0, 0] += 1
    assert_(out[0, 0, 0] != cond[0, 0, 0])

    assert_raises(ValueError, sampler.cfg_combine, cond, uncond[0], 2)


class TestStepUnmask(object):
    # Test sampler.step_unmask()

    def test_confident_cells(self):
        # Peaked logits make sampling deterministic.
        K, T, V = 2, 4, 5
        peaks = np.array([[1, 2, 3, 4], [0, 1, 2, 3]])
        heights = np.array([[50.0, 60.0, 70.0, 80.0], [2.0, 3.0, 4.0, 5.0]])
        logits = np.zeros((K, T, V))
        for k in range(K):
            for t in range(T):
                logits[k, t, peaks[k, t]] = heights[k, t]

        tokens = np.zeros((K, T), dtype=int)
        mask = np.ones((K, T), dtype=bool)
        tokens, mask = sampler.step_unmask(tokens, mask, logits, 4,
                                           utils.seeded_rng(0))

        assert_equal(mask[0], False)
        assert_equal(mask[1], True)
        assert_equal(tokens[0], peaks[0])

    def test_unmasked_untouched(self):
        rng = utils.seeded_rng(1)
        tokens = rng.integers(0, 6, (3, 5))
        mask = rng.random((3, 5)) < 0.6
        mask[0, 0] = True
        logits = rng.standard_normal((3, 5, 6))

        new_tokens, new_mask = sampler.step_unmask(tokens, mask, logits,
                                                   int(mask.sum()), rng, 2.0)
        assert_equal(new_tokens[~mask], tokens[~mask])
        assert_(not new_mask.any())
        assert_(np.all((0 <= new_tokens) & (new_tokens < 6)))

        # The inputs are not modified.
        assert_(mask.any())

    def test_ties(self):
        # Uniform logits: lowest (layer, frame) positions go first.
        mask = np.ones((2, 3), dtype=bool)
        mask[0, 1] = False
        tokens, mask = sampler.step_unmask(np.zeros((2, 3), dtype=int), mask,
                                           np.zeros((2, 3, 4)), 2,
                                           utils.seeded_rng(0))
        assert_equal(mask, [[False, False, False], [True, True, True]])

    def test_deterministic(self):
        rng = utils.seeded_rng(2)
        logits = rng.standard_normal((2, 6, 8))
        mask = np.ones((2, 6), dtype=bool)
        tokens = np.zeros((2, 6), dtype=int)
        a = sampler.step_unmask(tokens, mask, logits, 5, utils.seeded_rng(7),
                                1.0)
        b = sampler.step_unmask(tokens, mask, logits, 5, utils.seeded_rng(7),
                                1.0)
        assert_equal(a[0], b[0])
        assert_equal(a[1], b[1])
        assert_equal(a[1].sum(), 7)

    def test_zero(self):
        mask = np.ones((1, 3), dtype=bool)
        tokens, new_mask = sampler.step_unmask(np.zeros((1, 3), dtype=int),
                                               mask, np.zeros((1, 3, 2)), 0,
                                               utils.seeded_rng(0))
        assert_equal(new_mask, mask)

    def test_errors(self):
        mask = np.zeros((2, 3), dtype=bool)
        mask[0, 0] = True
        rng = utils.seeded_rng(0)
        assert_raises(ValueError, sampler.step_unmask, np.zeros((2, 3)),
                      mask, np.zeros((2, 3, 4)), 2, rng)
        assert_raises(ValueError, sampler.step_unmask, np.zeros((2, 3)),
                      mask, np.zeros((2, 4, 4)), 1, rng)


class TestDecode(object):
    # Test sampler.decode()

    def test_complete(self, model):
        cfg = SamplerConfig(n_steps=6)
        grid, trace = sampler.decode(model, [1, 2, 3], SPEAKER, 9, cfg,
                                     utils.seeded_rng(0))
        assert_equal((grid.K, grid.T), (2, 9))
        assert_(np.all((0 <= grid.tokens) & (grid.tokens < 8)))

        assert_equal(trace.n_steps, 6)
        counts = trace.masked_counts()
        assert_equal(counts[-1], 0)
        assert_(np.all(np.diff(counts) <= 0))
        assert_equal(sum(s.n_unmasked for s in trace.steps), 18)

    def test_forward_passes(self, model):
        for n in (1, 4, 7):
            cfg = SamplerConfig(n_steps=n)
            _, trace = sampler.decode(model, [1, 2], SPEAKER, 5, cfg,
                                      utils.seeded_rng(0))
            assert_equal(trace.forward_passes, 2 * n)

            cfg = replace(cfg, use_cfg=False)
            _, trace = sampler.decode(model, [1, 2], SPEAKER, 5, cfg,
                                      utils.seeded_rng(0))
            assert_equal(trace.forward_passes, n)

    def test_deterministic(self, model):
        cfg = SamplerConfig(n_steps=5)
        a, _ = sampler.decode(model, [4, 0, 4], SPEAKER, 8, cfg,
                              utils.seeded_rng(3))
        b, _ = sampler.decode(model, [4, 0, 4], SPEAKER, 8, cfg,
                              utils.seeded_rng(3))
        assert_equal(a.tokens, b.tokens)

    def test_written_tokens_kept(self, model, monkeypatch):
        history = []
        step = sampler.step_unmask

        def recording(*args, **kwargs):
            out = step(*args, **kwargs)
            history.append(out)
            return out

        monkeypatch.setattr(sampler, 'step_unmask', recording)
        sampler.decode(model, [1, 3], SPEAKER, 7, SamplerConfig(n_steps=5),
                       utils.seeded_rng(0))

        assert_equal(len(history), 5)
        for (t0, m0), (t1, m1) in zip(history[:-1], history[1:]):
            assert_(np.all(m0 | ~m1))
            assert_equal(t1[~m0], t0[~m0])

    def test_unit_guidance(self, model, monkeypatch):
        # With w = 1 the unconditional branch has no influence.
        cfg = SamplerConfig(n_steps=4, guidance_start=1.0, guidance_end=1.0)
        a, _ = sampler.decode(model, [2, 1], SPEAKER, 6, cfg,
                              utils.seeded_rng(5))

        logits = sampler._logits
        noise = utils.seeded_rng(9)

        def scrambled(*args, **kwargs):
            cond, uncond = logits(*args, **kwargs)
            return cond, noise.standard_normal(uncond.shape)

        monkeypatch.setattr(sampler, '_logits', scrambled)
        b, _ = sampler.decode(model, [2, 1], SPEAKER, 6, cfg,
                              utils.seeded_rng(5))
        assert_equal(a.tokens, b.tokens)

    def test_trace_dict(self, model):
        cfg = SamplerConfig(n_steps=3)
        _, trace = sampler.decode(model, [1], SPEAKER, 4, cfg,
                                  utils.seeded_rng(0))
        d = trace.to_dict()
        assert_equal(d['forward_passes'], 6)
        assert_equal(len(d['steps']), 3)
        assert_equal(d['steps'][0]['guidance'], 3.0)
        assert_(d['codes'] is None)

    def test_errors(self, model):
        cfg = SamplerConfig(n_steps=2)
        assert_raises(ValueError, sampler.decode, model, [1], SPEAKER, 0,
                      cfg, utils.seeded_rng(0))
        assert_raises(ValueError, sampler.decode, model, [5], SPEAKER, 4,
                      cfg, utils.seeded_rng(0))
        assert_raises(ValueError, sampler.decode, model, [], SPEAKER, 4,
                      cfg, utils.seeded_rng(0))


class TestDecodeTwoStage(object):
    # Test sampler.decode_two_stage()

    def _stages(self):
        base = _tiny()
        stage_a = network.build_model(
            replace(base, K=1, V=base.C,
                    frame_rate_hz=base.semantic_rate_hz), seed=1)
        stage_b = network.build_model(replace(base, cond_vocab=base.C),
                                      seed=2)
        return stage_a, stage_b

    def test_decode(self):
        stage_a, stage_b = self._stages()
        n = 4
        grid, trace = sampler.decode_two_stage(
            stage_a, stage_b, [1, 2, 3], SPEAKER, 9, SamplerConfig(n_steps=n),
            utils.seeded_rng(0))

        assert_equal((grid.K, grid.T), (2, 9))
        assert_equal(trace.forward_passes, 4 * n)
        assert_equal(len(trace.codes), 5)
        assert_(np.all((0 <= trace.codes) & (trace.codes < 4)))
        assert_equal(trace.masked_counts('semantic')[-1], 0)
        assert_equal(trace.masked_counts('acoustic')[-1], 0)
        assert_equal(len(trace.masked_counts('semantic')), n)

    def test_semantic_length(self):
        stage_a, stage_b = self._stages()
        _, trace = sampler.decode_two_stage(
            stage_a, stage_b, [1, 2], SPEAKER, 8, SamplerConfig(n_steps=2),
            utils.seeded_rng(0), T_sem=3)
        assert_equal(len(trace.codes), 3)

    def test_deterministic(self):
        stage_a, stage_b = self._stages()
        cfg = SamplerConfig(n_steps=3)
        a, ta = sampler.decode_two_stage(stage_a, stage_b, [0, 4], SPEAKER, 6,
                                         cfg, utils.seeded_rng(1))
        b, tb = sampler.decode_two_stage(stage_a, stage_b, [0, 4], SPEAKER, 6,
                                         cfg, utils.seeded_rng(1))
        assert_equal(a.tokens, b.tokens)
        assert_equal(ta.codes, tb.codes)

    def test_errors(self):
        stage_a, stage_b = self._stages()
        cfg = SamplerConfig(n_steps=2)
        assert_raises(ValueError, sampler.decode_two_stage, stage_b, stage_b,
                      [1], SPEAKER, 4, cfg, utils.seeded_rng(0))
        assert_raises(ValueError, sampler.decode_two_stage, stage_a, stage_a,
                      [1], SPEAKER, 4, cfg, utils.seeded_rng(0))
