# -*- coding: utf-8 -*-

from __future__ import absolute_import, division, print_function

import numpy as np

from scipy.integrate import quad

from maskspeech import masking, utils
from numpy.testing import assert_, assert_allclose, assert_equal, assert_raises


def test_mask_fraction():
    # Test masking.mask_fraction()
    assert_equal(masking.mask_fraction(0.0), 1.0)
    assert_equal(masking.mask_fraction(1.0), 0.0)
    assert_allclose(masking.mask_fraction(0.5), 0.70710678, atol=1e-8)

    r = np.linspace(0, 1, 101)
    assert_(np.all(np.diff(masking.mask_fraction(r)) < 0))

    assert_raises(ValueError, masking.mask_fraction, -0.1)
    assert_raises(ValueError, masking.mask_fraction, 1.1)


class TestTrainingMask(object):
    # Test masking.sample_training_mask()

    def test_forced_ratio(self):
        rng = utils.seeded_rng(0)
        mask, r = masking.sample_training_mask(3, 7, rng, r=0.0)
        assert_(np.all(mask))
        assert_equal(r, 0.0)

        mask, _ = masking.sample_training_mask(2, 10, rng, r=0.5)
        assert_equal(mask.shape, (2, 10))
        assert_equal(mask.sum(), 14)

    def test_at_least_one(self):
        rng = utils.seeded_rng(1)
        for _ in range(200):
            mask, _ = masking.sample_training_mask(1, 3, rng)
            assert_(mask.sum() >= 1)

        mask, _ = masking.sample_training_mask(4, 5, rng, r=1.0)
        assert_equal(mask.sum(), 1)

    def test_count(self):
        rng = utils.seeded_rng(2)
        for _ in range(50):
            mask, r = masking.sample_training_mask(4, 9, rng)
            desired = max(1, utils.round_half(np.cos(0.5 * np.pi * r) * 36))
            assert_equal(mask.sum(), desired)

    def test_mean_fraction(self):
        # Monte Carlo estimate against the integral of the schedule.
        desired = quad(masking.mask_fraction, 0, 1)[0]
        assert_allclose(desired, 2 / np.pi)

        rng = utils.seeded_rng(3)
        fractions = [masking.sample_training_mask(4, 25, rng)[0].mean()
                     for _ in range(10000)]
        assert_allclose(np.mean(fractions), desired, atol=0.03)

    def test_deterministic(self):
        a = masking.sample_training_mask(4, 30, utils.seeded_rng(9))
        b = masking.sample_training_mask(4, 30, utils.seeded_rng(9))
        assert_equal(a[0], b[0])
        assert_equal(a[1], b[1])

    def test_bad_shape(self):
        assert_raises(ValueError, masking.sample_training_mask, 0, 5,
                      utils.seeded_rng(0))


class TestUnmaskPlan(object):
    # Test masking.build_unmask_plan()

    def test_known(self):
        plan = masking.build_unmask_plan(100, 20)
        assert_equal(plan.n_steps, 20)
        assert_equal(plan.masked_after_step[9], 71)
        assert_equal(plan.masked_after_step[-1], 0)

    def test_single_step(self):
        plan = masking.build_unmask_plan(37, 1)
        assert_equal(plan.masked_after_step, [0])
        assert_equal(plan.unmask_counts, [37])

    def test_properties(self):
        for n in (1, 2, 5, 36, 100, 1377):
            for steps in (1, 2, 3, 8, 20, 50):
                plan = masking.build_unmask_plan(n, steps)
                counts = plan.masked_after_step
                assert_equal(len(counts), steps)
                assert_(np.all(np.diff(counts) <= 0))
                assert_(np.all((0 <= counts) & (counts <= n)))
                assert_equal(counts[-1], 0)
                assert_(np.all(plan.unmask_counts >= 0))
                assert_equal(plan.unmask_counts.sum(), n)

    def test_bad_arguments(self):
        assert_raises(ValueError, masking.build_unmask_plan, 0, 20)
        assert_raises(ValueError, masking.build_unmask_plan, 10, 0)
