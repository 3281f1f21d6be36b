import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from adcell.errors import PreconditionError
from adcell.services.harness import (
    CSV_FIELDS,
    Policy,
    budget_can_bind,
    capacity_can_bind,
    gen_half_tight,
    gen_integrality_gap,
    gen_random_instance,
    guarantee_applies,
    monte_carlo,
    monte_carlo_async,
    report_csv_row,
    run_trials,
    sample_scenario,
    trial_rng,
    write_trial_csv,
)
from adcell.services.model import Advertiser, Instance, Scenario, exclusivity_groups, validate_instance


class TestGenerators:
    def test_integrality_gap(self):
        inst = gen_integrality_gap(5)
        assert inst.m == 1 and inst.n == 5 and inst.s == 1
        assert inst.customers[0].capacity == 5
        assert all(q.prob == Fraction(1, 5) for q in inst.queries)
        with pytest.raises(PreconditionError):
            gen_integrality_gap(0)

    def test_half_tight(self):
        inst = gen_half_tight("1/10")
        assert inst.budget(0) == 10
        assert inst.bid(0, 1) == 9
        with pytest.raises(PreconditionError):
            gen_half_tight("1")

    @pytest.mark.parametrize("seed", range(10))
    def test_random_instances_are_valid_and_seeded(self, seed):
        inst = gen_random_instance(3, 7, 2, seed=seed)
        assert validate_instance(inst).is_valid
        assert inst.n == 7
        assert all(inst.bid(i, j) <= inst.budget(i) for i, j in inst.edges())
        assert gen_random_instance(3, 7, 2, seed=seed) == inst


class TestSampling:
    def test_trial_generators_are_independent_of_order(self):
        assert trial_rng(3, 5).random() == trial_rng(3, 5).random()
        assert trial_rng(3, 5).random() != trial_rng(3, 6).random()

    def test_arrival_frequencies(self, half_tight):
        rng = np.random.default_rng(0)
        draws = np.array([sample_scenario(half_tight, rng).arrived for _ in range(4000)], dtype=float)
        assert abs(draws[:, 0].mean() - 0.9) <= 3 * math.sqrt(0.09 / 4000)
        assert abs(draws[:, 1].mean() - 0.1) <= 3 * math.sqrt(0.09 / 4000)

    def test_at_most_one_arrival_per_group(self):
        inst = gen_random_instance(2, 9, 2, seed=4)
        rng = np.random.default_rng(1)
        for _ in range(200):
            scenario = sample_scenario(inst, rng)
            for group in exclusivity_groups(inst):
                assert sum(scenario.arrived[j] for j in group) <= 1


class TestMonteCarlo:
    def test_needs_enough_trials(self, gap4):
        with pytest.raises(PreconditionError):
            run_trials(gap4, Policy.IPB, 99, seed=0)

    def test_seed_fixes_the_run(self, half_tight):
        first = run_trials(half_tight, Policy.IPC, 100, seed=9)
        second = run_trials(half_tight, Policy.IPC, 100, seed=9)
        assert first == second

    @pytest.mark.asyncio
    async def test_pool_matches_serial_run(self, half_tight):
        pooled = await monte_carlo_async(half_tight, Policy.IPB, 120, seed=4, jobs=3)
        assert pooled == run_trials(half_tight, Policy.IPB, 120, seed=4, jobs=1)
        assert [o.trial for o in pooled] == list(range(120))

    def test_integrality_gap_report(self):
        report = monte_carlo(gen_integrality_gap(10), "ipb", trials=2000, seed=1)
        assert report.reference == "1"
        assert report.reference_label == "expectation-lp-b"
        assert report.meets_guarantee
        assert abs(report.mean - (1 - 0.9 ** 10)) <= 3 * report.std_error

    def test_half_tight_report_with_oracles(self, half_tight):
        report = monte_carlo(half_tight, Policy.IPC, trials=1000, seed=2, with_oracles=True)
        assert report.reference == "9/5"
        assert report.guarantee == 0.5
        assert report.meets_guarantee
        assert report.oracles == {"expected_offline": "171/100", "online_opt": "99/100"}

    def test_offline_rounding_report(self):
        inst = gen_random_instance(3, 6, 2, seed=2)
        report = monte_carlo(inst, Policy.OFFLINE_ROUND, trials=100, seed=5)
        assert report.reference_label == "realized-lp-bc-mean"
        assert 0.75 <= report.guarantee <= 1
        assert report.meets_guarantee

    def test_csv_output(self, half_tight, tmp_path):
        report = monte_carlo(half_tight, Policy.IPBC, trials=100, seed=0)
        lines = report_csv_row(report, header=True).splitlines()
        assert lines[0] == ",".join(CSV_FIELDS)
        assert lines[1].startswith("ipbc,100,0,")

        outcomes = run_trials(half_tight, Policy.IPBC, 100, seed=0)
        path = tmp_path / "trials.csv"
        write_trial_csv(path, outcomes)
        assert len(path.read_text().splitlines()) == 101


def _roomy(inst):
    """Same instance with budgets no advertiser can reach."""
    return replace(inst, advertisers=tuple(Advertiser(budget=Fraction(1000)) for _ in inst.advertisers))


def _two_certain_queries(capacity):
    return Instance.create(budgets=[10], capacities=[capacity], queries=[(0, 1, 1, {0: 5}), (0, 2, 1, {0: 5})])


class TestGuarantees:
    def test_binding_rows(self, gap4, half_tight):
        assert budget_can_bind(gap4)
        assert not capacity_can_bind(gap4)
        assert not budget_can_bind(half_tight)
        assert capacity_can_bind(half_tight)
        assert not guarantee_applies(half_tight, Policy.IPB)
        assert guarantee_applies(half_tight, Policy.IPC)
        assert not guarantee_applies(gap4, Policy.IPC)
        assert guarantee_applies(gap4, Policy.IPBC)

    def test_budget_program_gives_no_verdict_when_capacity_binds(self):
        report = monte_carlo(_two_certain_queries(capacity=1), Policy.IPB, trials=100, seed=0)
        assert report.reference == "10"
        assert report.mean == 5.0
        assert report.meets_guarantee is None
        row = report_csv_row(report).strip().split(",")
        assert row[CSV_FIELDS.index("meets_guarantee")] == ""

        report = monte_carlo(_two_certain_queries(capacity=2), Policy.IPB, trials=100, seed=0)
        assert report.mean == 10.0
        assert report.meets_guarantee is True

    @pytest.mark.parametrize("seed", range(4))
    def test_capacity_policy_ratio_on_random_instances(self, seed):
        inst = _roomy(gen_random_instance(3, 6, 2, seed=seed))
        report = monte_carlo(inst, Policy.IPC, trials=300, seed=seed)
        assert report.guarantee == 0.5
        assert report.meets_guarantee is True

    @pytest.mark.parametrize("seed", range(4))
    def test_combined_policy_ratio_on_random_instances(self, seed):
        inst = gen_random_instance(3, 6, 2, seed=seed)
        report = monte_carlo(inst, Policy.IPBC, trials=300, seed=seed)
        assert report.guarantee == pytest.approx(0.5 - 1 / math.e)
        assert report.meets_guarantee is True

    @pytest.mark.parametrize("seed", range(3))
    def test_rounding_ratio_on_random_instances(self, seed):
        report = monte_carlo(gen_random_instance(3, 6, 2, seed=10 + seed), Policy.OFFLINE_ROUND, trials=150, seed=seed)
        assert report.meets_guarantee is True


class TestFixedArrivals:
    def test_every_trial_replays_the_scenario(self, half_tight):
        fixed = Scenario(arrived=(True, False))
        outcomes = run_trials(half_tight, Policy.IPC, 100, seed=0, fixed=fixed)
        assert {o.arrivals for o in outcomes} == {1}
        assert {o.revenue for o in outcomes} == {Fraction(1)}

    def test_report_uses_the_realized_program(self, half_tight):
        report = monte_carlo(half_tight, Policy.IPC, trials=100, seed=0, fixed=Scenario(arrived=(True, False)))
        assert report.reference_label == "realized-lp-c"
        assert report.reference == "1"
        assert report.mean == 1.0
        assert report.meets_guarantee is None
