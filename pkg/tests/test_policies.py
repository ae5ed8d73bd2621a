from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirgmdp import catalog
from mirgmdp.errors import LatticeTooLargeError, UnsupportedExactError
from mirgmdp.gmdp import Portfolio, is_pvalid, members, state_of
from mirgmdp.policies import (
    OgpIndex,
    conjecture_action,
    conjecture_index,
    conjecture_scores,
    ogp,
    ogp_playout,
    ogp_policy,
    ordered_policy,
    random_pvalid,
)
from mirgmdp.priors import Instance, PointMass, TwoPoint, generate_instance

A1, A2, A3, A4 = 0, 1, 2, 3


@pytest.fixture
def four_gaussian():
    return catalog.four_gaussian()


class TestOgp:
    def test_full_state(self, four_gaussian):
        p = ogp(four_gaussian, four_gaussian.full_state)
        assert set(p.support) == {A1, A3}
        assert p.weight(A1) == pytest.approx(1 / 3, abs=1e-15)
        assert p.weight(A3) == pytest.approx(2 / 3, abs=1e-15)

    def test_after_first_neg_explored(self, four_gaussian):
        p = ogp(four_gaussian, state_of([A1, A2, A4]))
        assert set(p.support) == {A1, A4}
        assert p.weight(A1) == pytest.approx(1 / 2, abs=1e-15)

    def test_terminal(self, four_gaussian):
        assert ogp(four_gaussian, state_of([A3, A4])) is None

    def test_only_above_left(self, four_gaussian):
        assert ogp(four_gaussian, state_of([A2])) == Portfolio.single(A2)

    def test_ties_break_by_index(self):
        inst = Instance((PointMass(1.0), PointMass(-1.0), PointMass(-1.0)))
        assert ogp_policy(inst).action(0b111) == (0, 1)

    def test_every_action_admissible(self):
        for seed in range(5):
            inst = generate_instance(6, "unordered", seed)
            policy = ogp_policy(inst)
            for s in range(1 << inst.K):
                assert is_pvalid(inst, s, policy.action(s))

    def test_ordered_policy_reproduces_index_policy(self, four_gaussian):
        index = OgpIndex.for_instance(four_gaussian)
        same = ordered_policy(four_gaussian, index.above_order, index.neg_order)
        for s in range(16):
            assert same.action(s) == ogp_policy(four_gaussian).action(s)

    def test_ordered_policy_rejects_non_permutation(self, four_gaussian):
        with pytest.raises(ValueError):
            ordered_policy(four_gaussian, [A1], [A3, A4])
        with pytest.raises(ValueError):
            ordered_policy(four_gaussian, [A1, A2], [A3, A3])


class TestPlayout:
    def test_choices_drive_realized_arms(self, four_gaussian):
        steps, _ = ogp_playout(four_gaussian, choices=[0.0, 0.0])
        assert [arm for _, arm in steps] == [A1, A2]
        steps, _ = ogp_playout(four_gaussian, choices=[0.99, 0.99, 0.99, 0.99])
        assert [arm for _, arm in steps] == [A3, A4, A1, A2]

    @settings(max_examples=50)
    @given(st.integers(2, 200), st.integers(0, 2**31))
    def test_linear_operation_counts(self, k, seed):
        inst = generate_instance(k, "gaussian", seed)
        steps, counter = ogp_playout(inst, rng=np.random.default_rng(seed))
        assert len(steps) <= k
        assert counter.queries <= k + 1
        assert counter.pointer_moves <= k
        assert counter.removals == len(steps)

    def test_playout_matches_table_walk(self):
        inst = generate_instance(7, "unordered", 3)
        policy = ogp_policy(inst)
        rng = np.random.default_rng(0)
        for _ in range(50):
            u = rng.random(inst.K)
            steps, _ = ogp_playout(inst, choices=u)
            s = inst.full_state
            for n, (action, arm) in enumerate(steps):
                assert action == policy.action(s)
                p = policy.portfolio(s)
                assert arm == p.sample(u[n])
                s &= ~(1 << arm)
            assert policy.action(s) is None


class TestRandomPValid:
    @pytest.mark.parametrize("seed", range(5))
    def test_audit_clean(self, seed):
        inst = generate_instance(8, "unordered", seed)
        table = random_pvalid(inst, seed)
        assert table.audit(inst) == []
        assert len(table.actions) == 1 << inst.K

    def test_deterministic(self):
        inst = generate_instance(6, "unordered", 0)
        assert random_pvalid(inst, 11) == random_pvalid(inst, 11)

    def test_seeds_differ(self):
        inst = generate_instance(6, "unordered", 0)
        assert random_pvalid(inst, 1) != random_pvalid(inst, 2)

    def test_covers_every_pair(self):
        inst = generate_instance(4, "unordered", 1)
        full = inst.full_state
        seen = {random_pvalid(inst, seed).action(full) for seed in range(400)}
        expected = set(itertools.product(inst.above, inst.neg)) if inst.neg else {
            (i, i) for i in inst.above}
        assert seen == expected

    def test_size_limit(self):
        inst = generate_instance(21, "gaussian", 0)
        with pytest.raises(LatticeTooLargeError):
            random_pvalid(inst, 0)


class TestConjecture:
    def test_needs_discrete(self, four_gaussian):
        with pytest.raises(UnsupportedExactError):
            conjecture_scores(four_gaussian, four_gaussian.full_state)

    def test_scores_by_hand(self):
        inst = catalog.two_arm()
        scores = conjecture_scores(inst, inst.full_state)
        # Pr(beat) = .3; given that, best over both arms is 1; distance below = .4.
        assert scores == {1: pytest.approx(0.3 * 1.0 / 0.4)}

    def test_terminal_and_singletons(self):
        inst = catalog.two_arm()
        assert conjecture_action(inst, 0b10) is None
        assert conjecture_index(inst, 0b01) == Portfolio.single(0)

    @settings(max_examples=40)
    @given(st.lists(st.floats(0.05, 0.95).filter(lambda p: abs(p - 0.5) > 1e-3),
                    min_size=2, max_size=6), st.integers(0, 2**31))
    def test_agrees_with_ogp_on_common_two_point_support(self, probs, seed):
        arms = tuple(TwoPoint(-1.0, 1.0, p) for p in probs)
        inst = Instance(arms, default=PointMass(0.0))
        if not inst.above:
            return
        rng = np.random.default_rng(seed)
        for s in rng.integers(0, 1 << inst.K, size=8).tolist() + [inst.full_state]:
            assert conjecture_action(inst, s) == ogp_policy(inst).action(s)
