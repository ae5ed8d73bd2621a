from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mirgmdp.errors import InvalidInstanceError, InvalidPriorError
from mirgmdp.priors import (
    FAMILIES,
    TEMPLATES,
    FiniteDiscrete,
    Gaussian,
    Instance,
    PointMass,
    TwoPoint,
    discretize,
    dominates,
    generate_instance,
)

from oracles import binomial_band


class TestMean:
    def test_gaussian(self):
        assert Gaussian(2.0, 1.0).mean == 2.0

    def test_point_mass(self):
        assert PointMass(0.0).mean == 0.0

    def test_two_point(self):
        assert TwoPoint(-1.0, 1.0, 0.6).mean == pytest.approx(0.2, abs=1e-15)

    def test_finite_discrete_matches_weighted_sum(self):
        prior = FiniteDiscrete((-2.0, 0.5, 3.0), (0.2, 0.5, 0.3))
        assert prior.mean == pytest.approx(-0.4 + 0.25 + 0.9, abs=1e-15)

    def test_gaussian_mean_matches_quadrature(self):
        prior = Gaussian(-1.3, 0.7)
        value, _ = integrate.quad(lambda x: x * stats.norm.pdf(x, -1.3, 0.7), -np.inf, np.inf)
        assert abs(value - prior.mean) <= 1e-6


class TestCdf:
    def test_point_mass_below(self):
        assert PointMass(0.0).cdf(-0.5) == 0.0

    def test_two_point_at_zero(self):
        assert TwoPoint(-1.0, 1.0, 0.6).cdf(0.0) == pytest.approx(0.4)

    def test_gaussian_symmetry(self):
        assert Gaussian(0.0, 1.0).cdf(0.0) == 0.5

    def test_right_continuous_at_atoms(self):
        prior = FiniteDiscrete((-1.0, 2.0), (0.25, 0.75))
        assert prior.cdf(-1.0) == 0.25
        assert prior.cdf_left(-1.0) == 0.0
        assert prior.cdf(2.0) == 1.0

    @pytest.mark.parametrize("prior", [
        TwoPoint(-1.0, 3.0, 0.3),
        FiniteDiscrete((-2.0, -1.0, 0.5, 4.0), (0.1, 0.2, 0.3, 0.4)),
        Gaussian(0.4, 2.0),
        discretize(Gaussian(1.0, 1.0)),
    ])
    def test_monotone_with_limits(self, prior):
        grid = np.linspace(-50, 50, 2001)
        values = prior.cdf(grid)
        assert np.all(np.diff(values) >= 0)
        assert values[0] == pytest.approx(0.0, abs=1e-12)
        assert values[-1] == pytest.approx(1.0, abs=1e-12)


class TestProbPositive:
    def test_two_point(self):
        assert TwoPoint(-1.0, 1.0, 0.3).prob_positive() == 0.3

    def test_point_mass_zero(self):
        assert PointMass(0.0).prob_positive() == 0.0

    def test_gaussian_tail(self):
        assert Gaussian(-1.0, 1.0).prob_positive() == pytest.approx(0.158655253931457, abs=1e-12)

    def test_threshold_argument(self):
        prior = FiniteDiscrete((-1.0, 0.5, 2.0), (0.2, 0.3, 0.5))
        assert prior.prob_positive(0.5) == 0.5
        assert prior.prob_positive(-2.0) == 1.0


class TestSample:
    def test_point_mass_constant(self):
        rng = np.random.default_rng(5)
        assert np.all(PointMass(3.0).sample(rng, 100) == 3.0)

    def test_two_point_frequency(self):
        p = 0.37
        n = 1_000_000
        draws = TwoPoint(-1.0, 1.0, p).sample(np.random.default_rng(11), n)
        lo, hi = binomial_band(p, n)
        assert lo <= np.mean(draws > 0) <= hi

    def test_gaussian_sample_mean(self):
        n = 1_000_000
        draws = Gaussian(1.5, 2.0).sample(np.random.default_rng(3), n)
        assert abs(draws.mean() - 1.5) <= 4 * 2.0 / 1000

    def test_deterministic_given_seed(self):
        prior = FiniteDiscrete((-1.0, 0.0, 1.0), (0.2, 0.3, 0.5))
        a = prior.sample(np.random.default_rng(9), 50)
        b = prior.sample(np.random.default_rng(9), 50)
        np.testing.assert_array_equal(a, b)

    def test_discrete_frequencies(self):
        prior = FiniteDiscrete((-1.0, 0.0, 1.0), (0.2, 0.3, 0.5))
        n = 200_000
        draws = prior.sample(np.random.default_rng(1), n)
        for value, p in zip(prior.values, prior.probs):
            lo, hi = binomial_band(p, n, 4.0)
            assert lo <= np.mean(draws == value) <= hi


class TestValidation:
    @pytest.mark.parametrize("args", [(1.0, 2.0, 0.5), (-1.0, -0.5, 0.5), (-1.0, 1.0, 0.0),
                                      (-1.0, 1.0, 1.0)])
    def test_two_point_rejects(self, args):
        with pytest.raises(InvalidPriorError):
            TwoPoint(*args)

    @pytest.mark.parametrize("values,probs", [
        ((0.0, 0.0), (0.5, 0.5)),
        ((1.0, 0.0), (0.5, 0.5)),
        ((0.0, 1.0), (0.0, 1.0)),
        ((0.0, 1.0), (0.5, 0.6)),
        ((), ()),
    ])
    def test_finite_discrete_rejects(self, values, probs):
        with pytest.raises(InvalidPriorError):
            FiniteDiscrete(values, probs)

    def test_finite_discrete_sum_tolerance(self):
        FiniteDiscrete((0.0, 1.0), (0.5, 0.5 + 5e-13))
        with pytest.raises(InvalidPriorError):
            FiniteDiscrete((0.0, 1.0), (0.5, 0.5 + 1e-11))

    def test_gaussian_rejects_nonpositive_sigma(self):
        with pytest.raises(InvalidPriorError):
            Gaussian(0.0, 0.0)

    def test_support_bounds(self):
        assert TwoPoint(-1.0, 5.0, 0.5).support_bound == 5.0
        assert FiniteDiscrete((-3.0, 1.0), (0.5, 0.5)).support_bound == 3.0
        assert Gaussian(0.0, 1.0).support_bound is None

    def test_families_registry(self):
        assert set(FAMILIES) == {"point", "two_point", "discrete", "gaussian"}


class TestDominance:
    def test_gaussian_example_arms(self):
        assert dominates(Gaussian(-1.0, 1.0), Gaussian(-2.0, 1.0))
        assert not dominates(Gaussian(-2.0, 1.0), Gaussian(-1.0, 1.0))

    @pytest.mark.parametrize("prior", [Gaussian(0.0, 2.0), TwoPoint(-1.0, 1.0, 0.4),
                                       FiniteDiscrete((-1.0, 0.0, 3.0), (0.2, 0.3, 0.5))])
    def test_reflexive(self, prior):
        assert dominates(prior, prior)

    def test_merged_support_scan(self):
        p = FiniteDiscrete((-1.0, 1.0), (0.45, 0.55))
        q = FiniteDiscrete((-2.0, 1.0), (0.5, 0.5))
        assert dominates(p, q)
        assert not dominates(q, p)

    def test_crossing_cdfs(self):
        wide = TwoPoint(-3.0, 3.0, 0.5)
        narrow = TwoPoint(-1.0, 1.0, 0.5)
        assert not dominates(wide, narrow)
        assert not dominates(narrow, wide)

    def test_unequal_sigma_gaussians_incomparable(self):
        assert not dominates(Gaussian(1.0, 1.0), Gaussian(0.0, 2.0))

    def test_cross_family_with_unbounded_support(self):
        assert not dominates(Gaussian(5.0, 1.0), TwoPoint(-1.0, 1.0, 0.5))
        assert not dominates(TwoPoint(-1.0, 1.0, 0.5), Gaussian(-5.0, 1.0))

    def test_discretization_keeps_order(self):
        assert dominates(discretize(Gaussian(-1.0, 1.0)), discretize(Gaussian(-2.0, 1.0)))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    def test_common_support_two_point_total_order(self, p, q):
        a, b = TwoPoint(-1.0, 2.0, p), TwoPoint(-1.0, 2.0, q)
        assert dominates(a, b) == (p >= q)
        assert dominates(a, b) or dominates(b, a)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=5), st.floats(0.0, 3.0))
    def test_shift_dominates(self, weights, shift):
        probs = np.array(weights) / sum(weights)
        values = np.arange(len(weights), dtype=float)
        base = FiniteDiscrete(tuple(values), tuple(probs))
        shifted = FiniteDiscrete(tuple(values + shift), tuple(probs))
        assert dominates(shifted, base)


class TestInstance:
    def test_partitions(self):
        inst = Instance(tuple(Gaussian(m, 1.0) for m in (2.0, 1.0, -1.0, -2.0)))
        assert inst.above == (0, 1)
        assert inst.neg == (2, 3)
        assert inst.above_mask == 0b0011
        assert inst.neg_mask == 0b1100
        assert inst.threshold == 0.0

    def test_threshold_is_default_mean(self):
        inst = Instance((TwoPoint(-1.0, 1.0, 0.9),), default=FiniteDiscrete((0.0, 1.0), (0.5, 0.5)))
        assert inst.threshold == 0.5
        assert inst.above == (0,)

    def test_rejects_mean_at_threshold(self):
        with pytest.raises(InvalidInstanceError):
            Instance((TwoPoint(-1.0, 1.0, 0.5),))
        with pytest.raises(InvalidInstanceError):
            Instance((PointMass(1e-10),))
        Instance((PointMass(2e-9),))

    def test_rejects_empty(self):
        with pytest.raises(InvalidInstanceError):
            Instance(())

    def test_means_read_only(self):
        inst = Instance((PointMass(1.0),))
        with pytest.raises(ValueError):
            inst.means[0] = 2.0

    def test_support_bound(self):
        inst = Instance((TwoPoint(-1.0, 4.0, 0.5), PointMass(-2.0)))
        assert inst.support_bound == 4.0
        assert Instance((Gaussian(1.0),)).support_bound is None


class TestGenerateInstance:
    @pytest.mark.parametrize("template", ["gaussian", "gaussian21", "two_point", "discrete"])
    @pytest.mark.parametrize("seed", range(10))
    def test_ordered_templates(self, template, seed):
        inst = generate_instance(6, template, seed)
        assert inst.K == 6
        assert inst.above
        assert inst.neg_arms_ordered()
        order = sorted(inst.neg, key=lambda j: -inst.means[j])
        for a, b in zip(order, order[1:]):
            assert dominates(inst.arms[a], inst.arms[b])

    def test_gaussian_k4(self):
        inst = generate_instance(4, "gaussian", 17)
        assert inst.K == 4
        assert all(isinstance(a, Gaussian) for a in inst.arms)

    @pytest.mark.parametrize("template", TEMPLATES)
    def test_single_arm(self, template):
        inst = generate_instance(1, template, 2)
        assert inst.K == 1 and inst.above == (0,)

    def test_two_point_k10_all_comparable(self):
        inst = generate_instance(10, "two_point", 4)
        for a in inst.arms:
            for b in inst.arms:
                assert dominates(a, b) or dominates(b, a)

    def test_deterministic(self):
        a = generate_instance(5, "discrete", 8)
        b = generate_instance(5, "discrete", 8)
        assert a.arms == b.arms

    def test_bad_arguments(self):
        with pytest.raises(InvalidInstanceError):
            generate_instance(0)
        with pytest.raises(InvalidInstanceError):
            generate_instance(3, "lognormal", 1)

    def test_retry_budget(self):
        with pytest.raises(InvalidInstanceError):
            generate_instance(3, "two_point", 1, H=1e-9, max_tries=3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.sampled_from(["gaussian", "two_point", "discrete"]),
           st.integers(0, 2**32 - 1))
    def test_postconditions_property(self, k, template, seed):
        inst = generate_instance(k, template, seed)
        assert inst.above
        assert inst.neg_arms_ordered()
        assert set(inst.above) | set(inst.neg) == set(range(k))
        assert not set(inst.above) & set(inst.neg)


def test_discretize_keeps_mean():
    prior = discretize(Gaussian(1.7, 0.4), 21)
    assert len(prior.values) == 21
    assert math.isclose(prior.mean, 1.7, abs_tol=1e-12)
