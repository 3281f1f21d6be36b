from dataclasses import replace

from adcell import config
from adcell.services.model import Instance
from adcell.services.verification import CheckStatus, run_invariant_suite

EXACT_CHECKS = [
    "instance-valid",
    "lp-variant-order",
    "expectation-lp-dominance",
    "forestify",
    "rounding-constraints",
    "knapsack-half-bound",
    "online-capacity-safety",
    "oracle-sandwich",
    "knapsack-online-oracle",
]
STATISTICAL_CHECKS = [
    "ratio-ipb",
    "ratio-ipc",
    "ratio-ipbc",
    "ratio-offline-round",
    "rounding-martingale",
]


def _statuses(report):
    return {c.name: c.status for c in report.checks}


class TestInvariantSuite:
    def test_gap_instance_passes(self, gap4):
        report = run_invariant_suite(gap4, seed=3, trials=30)
        assert report.passed, report.failures()
        assert list(_statuses(report)) == EXACT_CHECKS + STATISTICAL_CHECKS

    def test_few_trials_skip_the_statistical_checks(self, half_tight):
        statuses = _statuses(run_invariant_suite(half_tight, seed=1, trials=20))
        assert all(statuses[name] is CheckStatus.SKIP for name in STATISTICAL_CHECKS)
        assert all(statuses[name] is CheckStatus.PASS for name in EXACT_CHECKS)

    def test_half_tight_statistical_checks(self, half_tight):
        report = run_invariant_suite(half_tight, seed=1, trials=200)
        assert report.passed, report.failures()
        statuses = _statuses(report)
        # one slot and two arrival times: LP_B ignores a capacity that binds
        assert statuses["ratio-ipb"] is CheckStatus.SKIP
        for name in ("ratio-ipc", "ratio-ipbc", "ratio-offline-round", "rounding-martingale"):
            assert statuses[name] is CheckStatus.PASS
        assert statuses["knapsack-online-oracle"] is CheckStatus.PASS

    def test_gap_instance_statistical_checks(self, gap4):
        statuses = _statuses(run_invariant_suite(gap4, seed=2, trials=150))
        assert statuses["ratio-ipb"] is CheckStatus.PASS
        # four unit bids against a unit budget
        assert statuses["ratio-ipc"] is CheckStatus.SKIP
        assert statuses["knapsack-online-oracle"] is CheckStatus.SKIP
        assert statuses["rounding-martingale"] is CheckStatus.PASS

    def test_invalid_instance_stops_early(self):
        inst = Instance.create(budgets=[0], capacities=[1], queries=[(0, 1, "1/2", {0: 1})])
        report = run_invariant_suite(inst, seed=0, trials=5)
        assert not report.passed
        assert [c.name for c in report.failures()] == ["instance-valid"]
        assert len(report.checks) == 1

    def test_size_guard_skips(self, gap4, monkeypatch):
        monkeypatch.setattr(config, "settings", replace(config.settings, oracle_max_scenarios=2))
        report = run_invariant_suite(gap4, seed=0, trials=10)
        statuses = _statuses(report)
        assert statuses["expectation-lp-dominance"] is CheckStatus.SKIP
        assert statuses["oracle-sandwich"] is CheckStatus.SKIP
        assert report.passed

    def test_report_dict(self, gap4):
        data = run_invariant_suite(gap4, seed=0, trials=5).to_dict()
        assert data["passed"] is True
        assert {"name", "status", "detail"} <= set(data["checks"][0])
