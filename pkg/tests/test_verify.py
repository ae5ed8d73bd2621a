from __future__ import annotations

from mirgmdp import catalog, verify
from mirgmdp.priors import Instance, TwoPoint


class TestSuites:
    def test_equivalence(self):
        result = verify.equivalence(count=10, pairs=3)
        assert result.passed
        assert len(result.checks) == 10

    def test_ogp_ordered(self):
        assert verify.ogp_optimality(count=15).passed

    def test_ogp_unordered_labels(self):
        result = verify.ogp_optimality(count=60, template="unordered", k_max=6)
        assert result.passed
        failed = [c for c in result.checks if not c.passed]
        assert failed
        assert all(c.expected_failure and c.status == "expected-fail" for c in failed)

    def test_dominance(self):
        assert verify.dominance(count=10).passed

    def test_certificates(self):
        result = verify.mir_certificates(runs=100, instances=[catalog.two_arm(),
                                                              catalog.bic_two_arm()])
        assert result.passed
        assert [c.label for c in result.checks] == [
            "iregb/two_arm", "iregb/bic_two_arm", "bic_iregb/bic_two_arm"]

    def test_bic_audit_small(self):
        result = verify.bic_audit(replications=5_000, horizon=30, power_replications=5_000,
                                  power_horizon=10)
        assert result.passed


class TestReporting:
    def test_counterexample_dump_on_failure(self):
        inst = Instance((TwoPoint(-1.0, 1.0, 0.6),), name="x")
        check = verify._certificate_check("demo", -1.0, inst)
        result = verify.SuiteResult("demo", [check])
        lines = result.lines()
        assert not result.passed
        assert lines[0].startswith("FAIL")
        assert "counterexample for demo:" in lines
        assert lines[-1].startswith("FAIL demo: 1 checks, 1 failed")
