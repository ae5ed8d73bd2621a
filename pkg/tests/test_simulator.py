from __future__ import annotations

import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirgmdp import catalog, dp
from mirgmdp.errors import InvalidPriorError, UnsupportedExactError
from mirgmdp.gmdp import DEFAULT, mir_certificate
from mirgmdp.priors import FiniteDiscrete, Gaussian, Instance, PointMass, TwoPoint, generate_instance
from mirgmdp.simulator import (
    PHASES,
    InformationSet,
    Tape,
    batch_iregb_totals,
    bernoulli_trial_portfolio,
    convergence_bound,
    discovery_frequency,
    estimate_welfare,
    geometric_failures,
    inverse_gap_expectation,
    replication_rng,
    run_iregb,
    run_iregb_prime,
    welfare_samples,
    write_welfare_csv,
)

import oracles


def certificate_ok(trace) -> bool:
    return trace.min_certificate() >= -1e-9


class TestBernoulliPortfolio:
    def test_unequal_magnitudes(self):
        inst = Instance((PointMass(1.0), PointMass(-1.0)))
        p = bernoulli_trial_portfolio(0.5, inst, 1, 0)
        assert p.weight(0) == pytest.approx(2 / 3, abs=1e-15)
        assert p.weight(1) == pytest.approx(1 / 3, abs=1e-15)

    def test_symmetric(self):
        inst = Instance((PointMass(1.0), PointMass(-1.0)))
        p = bernoulli_trial_portfolio(1.0, inst, 1, 0)
        assert p.weight(0) == pytest.approx(0.5)
        assert p.weight(1) == pytest.approx(0.5)

    @settings(max_examples=100)
    @given(st.floats(1e-3, 1e3), st.floats(-1e3, -1e-3))
    def test_certificate_is_zero(self, x_best, mean_j):
        inst = Instance((PointMass(1.0), PointMass(mean_j)))
        p = bernoulli_trial_portfolio(x_best, inst, 1, 0)
        conditional = np.array([x_best, mean_j])
        assert abs(p.expectation(conditional, 0.0)) <= 1e-12 * max(1.0, x_best, -mean_j)

    def test_rejects_non_positive_best(self):
        inst = Instance((PointMass(1.0), PointMass(-1.0)))
        with pytest.raises(ValueError):
            bernoulli_trial_portfolio(0.0, inst, 1, 0)


class TestGeometricFailures:
    def test_edges(self):
        assert geometric_failures(0.3, 1.0) == 0.0
        assert geometric_failures(0.3, 0.0) == math.inf
        assert geometric_failures(1.0, 0.5) == 0.0

    def test_mean(self):
        u = 1.0 - np.random.default_rng(0).random(200_000)
        draws = np.array([geometric_failures(x, 0.2) for x in u])
        assert draws.mean() == pytest.approx(4.0, rel=0.02)


class TestInformationSet:
    def test_static_values(self):
        info = InformationSet(2)
        info.reveal(0, 1.5)
        info.reveal(0, 1.5)
        with pytest.raises(ValueError):
            info.reveal(0, 2.0)

    def test_conditional_means(self):
        inst = catalog.two_arm()
        info = InformationSet(2)
        info.reveal(1, 1.0)
        np.testing.assert_allclose(info.conditional_means(inst), [0.2, 1.0], atol=1e-15)
        assert info.best_revealed() == (1, 1.0)


class TestRunIregb:
    def test_nothing_explorable(self):
        inst = Instance((PointMass(-1.0), PointMass(-2.0)))
        trace = run_iregb(inst, 50, 0)
        assert trace.phase_sequence() == ["exploit-default"]
        assert np.all(trace.arms() == DEFAULT)
        assert trace.total_reward() == 50 * 0.0

    def test_no_neg_arms_explores_each_once(self):
        inst = Instance((PointMass(1.0), PointMass(2.0), PointMass(0.5)))
        trace = run_iregb(inst, 20, 0)
        phases = [r.phase for r in trace.rounds()]
        assert phases[:3] == ["ogp-exploration"] * 3
        assert set(phases[3:]) == {"exploit-best"}
        assert sorted(trace.arms()[:3].tolist()) == [0, 1, 2]
        assert np.all(trace.arms()[3:] == 1)

    def test_truncation(self):
        inst = Instance((PointMass(1.0), PointMass(2.0), PointMass(0.5)))
        trace = run_iregb(inst, 2, 0)
        assert trace.rounds_played == 2
        with pytest.raises(ValueError):
            run_iregb(inst, 0, 0)

    @pytest.mark.parametrize("name", ["two_arm", "unordered_counterexample", "conv_four_wide",
                                      "bic_three_arm"])
    def test_certificates_and_phases(self, name):
        inst = catalog.by_name(name)
        order = {p: n for n, p in enumerate(PHASES)}
        for r in range(2_000):
            trace = run_iregb(inst, 500, replication_rng(0, r))
            assert certificate_ok(trace)
            ranks = [order[p] for p in trace.phase_sequence()]
            assert ranks == sorted(ranks)
            assert trace.rounds_played == 500

    def test_certificates_match_recomputation(self):
        inst = catalog.conv_four_wide()
        for r in range(200):
            trace = run_iregb(inst, 300, replication_rng(1, r))
            info = InformationSet(inst.K)
            for seg in trace.segments:
                cond = info.conditional_means(inst)
                if seg.arm != DEFAULT:
                    expected = seg.portfolio.expectation(cond, inst.threshold) - inst.threshold
                    assert seg.certificate == pytest.approx(expected, abs=1e-12)
                    info.reveal(seg.arm, seg.reward)

    def test_gaussian_runs(self):
        trace = run_iregb(catalog.four_gaussian(), 1000, 3)
        assert certificate_ok(trace)

    def test_static_rewards(self):
        inst = catalog.conv_four_discrete()
        for r in range(200):
            trace = run_iregb(inst, 400, replication_rng(2, r))
            for rnd in trace.rounds():
                expected = trace.default_value if rnd.arm == DEFAULT else trace.realized[rnd.arm]
                assert rnd.reward == expected

    def test_deterministic(self):
        inst = catalog.conv_four_wide()
        a = run_iregb(inst, 1000, replication_rng(5, 3))
        b = run_iregb(inst, 1000, replication_rng(5, 3))
        assert a.segments == b.segments


class TestBatchEngine:
    @pytest.mark.parametrize("name", ["two_arm", "unordered_counterexample", "conv_four_wide",
                                      "conv_four_discrete", "four_gaussian_discretized", "empty_neg"])
    def test_matches_scalar_on_shared_tape(self, name):
        inst = catalog.by_name(name)
        horizons = [1, 3, 10, 100, 1000]
        tape = Tape.draw(inst, 400, np.random.default_rng(7))
        batch = batch_iregb_totals(inst, horizons, tape)
        for row in range(tape.rewards.shape[0]):
            trace = run_iregb(inst, max(horizons), None, source=tape.source(row))
            for h, T in enumerate(horizons):
                truncated = run_iregb(inst, T, None, source=tape.source(row))
                assert batch[row, h] == pytest.approx(truncated.total_reward(), abs=1e-9)
            assert batch[row, -1] == pytest.approx(trace.total_reward(), abs=1e-9)


class TestIregbPrime:
    def test_first_upper_atom_exploits(self):
        inst = Instance((TwoPoint(-1.0, 1.0, 0.7), TwoPoint(-1.0, 1.0, 0.3)))
        tape = Tape.draw(inst, 1, np.random.default_rng(0))
        tape.rewards[:] = [1.0, -1.0]
        tape.explore[:] = 0.0
        trace = run_iregb_prime(inst, 10, None, source=tape.source(0))
        assert trace.phase_sequence() == ["ogp-exploration", "exploit-best"]
        assert trace.segments[1].length == 9

    @pytest.mark.parametrize("u, n_explored", [(0.0, 1), (0.99, 2)])
    def test_all_lower_atoms(self, u, n_explored):
        inst = Instance((TwoPoint(-1.0, 1.0, 0.7), TwoPoint(-1.0, 1.0, 0.3)))
        tape = Tape.draw(inst, 1, np.random.default_rng(0))
        tape.rewards[:] = [-1.0, -1.0]
        tape.explore[:] = u
        trace = run_iregb_prime(inst, 10, None, source=tape.source(0))
        explored = [s for s in trace.segments if s.phase == "ogp-exploration"]
        assert len(explored) == n_explored
        assert trace.segments[-1].phase == "exploit-default"
        assert trace.total_reward() == -1.0 * n_explored

    def test_rejects_other_families(self):
        with pytest.raises(InvalidPriorError):
            run_iregb_prime(catalog.four_gaussian(), 10, 0)
        mixed = Instance((TwoPoint(-1.0, 1.0, 0.7), TwoPoint(-1.0, 2.0, 0.2)))
        with pytest.raises(InvalidPriorError):
            run_iregb_prime(mixed, 10, 0)

    @pytest.mark.parametrize("H", [1.0, 3.0])
    def test_discovery_probability(self, H):
        inst = Instance((TwoPoint(-1.0, H, 0.6), TwoPoint(-1.0, H, 0.6), TwoPoint(-1.0, H, 0.1)))
        n = 1_000_000
        expected = 1 / (H + 1)
        lo, hi = oracles.binomial_band(expected, n)
        for i in inst.above:
            freq = discovery_frequency(inst, i, 2, n, np.random.default_rng(int(H) * 10 + i))
            assert lo <= freq <= hi

    def test_certificates(self):
        inst = Instance(tuple(TwoPoint(-1.0, 2.0, p) for p in (0.5, 0.4, 0.2, 0.1)))
        for r in range(1000):
            assert certificate_ok(run_iregb_prime(inst, 200, replication_rng(0, r)))


class TestWelfare:
    def test_point_mass_has_zero_stderr(self):
        inst = Instance((PointMass(1.0), PointMass(-1.0)))
        est = estimate_welfare(inst, "iregb", 100, 10, 0)
        assert est.stderr == 0.0

    def test_needs_two_replications(self):
        with pytest.raises(ValueError):
            estimate_welfare(catalog.two_arm(), "iregb", 10, 1, 0)

    def test_unknown_mechanism(self):
        with pytest.raises(ValueError):
            welfare_samples(catalog.two_arm(), "nope", [10], 5, 0)

    def test_stderr_shrinks_with_replications(self):
        inst = catalog.two_arm()
        small = estimate_welfare(inst, "iregb", 100, 40_000, 0).stderr
        large = estimate_welfare(inst, "iregb", 100, 80_000, 1).stderr
        assert large / small == pytest.approx(1 / math.sqrt(2), rel=0.2)

    def test_deterministic_given_seed(self):
        inst = catalog.conv_four_wide()
        a = estimate_welfare(inst, "iregb", 1000, 1000, 4)
        b = estimate_welfare(inst, "iregb", 1000, 1000, 4)
        assert a == b

    def test_scalar_and_batch_engines_agree_statistically(self):
        inst = catalog.two_arm()
        a = estimate_welfare(inst, "iregb", 200, 20_000, 0, engine="batch")
        b = estimate_welfare(inst, "iregb", 200, 20_000, 1, engine="scalar")
        assert abs(a.mean - b.mean) <= 4 * math.hypot(a.stderr, b.stderr)

    def test_two_arm_convergence(self):
        inst = catalog.two_arm()
        T = 10_000
        est = estimate_welfare(inst, "iregb", T, 100_000, 0)
        assert est.mean >= convergence_bound(inst, T) - 4 * est.stderr
        assert est.mean <= 0.64 + 4 * est.stderr


class TestConvergenceBound:
    def test_no_neg_arms(self):
        inst = catalog.empty_neg()
        assert convergence_bound(inst, 100) == pytest.approx((1 - inst.K / 100) * dp.w_star(inst))

    def test_limit(self):
        inst = catalog.two_arm()
        assert convergence_bound(inst, 10**12) == pytest.approx(0.64, abs=1e-9)

    def test_inverse_gap_matches_oracle(self):
        for name in ("two_arm", "conv_four_wide", "conv_four_discrete", "unordered_counterexample"):
            inst = catalog.by_name(name)
            assert inverse_gap_expectation(inst) == pytest.approx(
                oracles.expected_inverse_gap(inst), rel=1e-12)

    def test_two_arm_formula(self):
        inst = catalog.two_arm()
        # eta = .4; the best above reward beats 0 only at 1, so E[1/delta] = 1.
        assert convergence_bound(inst, 100) == pytest.approx((1 - 2 * 1.4 / 100) * 0.64)

    @pytest.mark.parametrize("H", [1, 2, 3])
    def test_integer_support(self, H):
        support = tuple(float(v) for v in range(-H, H + 1))
        rng = np.random.default_rng(H)
        arms = []
        while len(arms) < 4:
            probs = rng.dirichlet(np.ones(len(support)))
            prior = FiniteDiscrete(support, tuple(probs / probs.sum()))
            if abs(prior.mean) > 1e-3:
                arms.append(prior)
        inst = Instance(tuple(arms))
        optimum = dp.w_star(inst)
        T = 1000
        assert convergence_bound(inst, T) >= (1 - inst.K * (H + 1) / T) * optimum - 1e-12

    def test_needs_discrete(self):
        with pytest.raises(UnsupportedExactError):
            convergence_bound(catalog.four_gaussian(), 100)


class TestExports:
    def test_jsonl(self):
        trace = run_iregb(catalog.two_arm(), 5, 0)
        buf = io.StringIO()
        trace.write_jsonl(buf)
        records = [json.loads(line) for line in buf.getvalue().splitlines()]
        assert [r["t"] for r in records] == [1, 2, 3, 4, 5]
        assert set(records[0]) == {"t", "portfolio", "arm", "reward", "phase", "certificate"}

    def test_csv(self):
        buf = io.StringIO()
        write_welfare_csv(buf, [dict(instance_id="x", mechanism="iregb", T=10, replications=2,
                                     mean=0.5, stderr=0.1, bound=0.4)], header_comment="seed=0")
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# seed=0"
        assert lines[1] == "instance_id,mechanism,T,replications,mean,stderr,bound"
        assert lines[2] == "x,iregb,10,2,0.5,0.1,0.4"
