import json
from fractions import Fraction

import numpy as np
import pytest

from adcell.errors import CaseEngineError, PreconditionError
from adcell.services.harness import gen_random_instance, sample_scenario, trial_rng
from adcell.services.model import (
    FractionalAssignment,
    Instance,
    Scenario,
    advertiser_payments,
    advertiser_spend,
    check_assignment,
    fractional_revenue,
)
from adcell.services.offline_rounding import (
    Constraint,
    RoundingTrace,
    Subsystem,
    SupportForest,
    approx_ratio_bound,
    forestify,
    null_vector,
    plan_rand_move,
    rand_move,
    realized_lp,
    round_offline,
    solve_offline,
    support_forest,
)

HALF = Fraction(1, 2)


def _pair_system(guards=()):
    return Subsystem(
        columns=((0, 0), (1, 0)),
        equalities=(Constraint("F0", {0: Fraction(1), 1: Fraction(1)}, Fraction(1)),),
        guards=tuple(guards),
    )


class TestRandMove:
    def test_single_row_direction_and_steps(self):
        plan = plan_rand_move(_pair_system(), [HALF, HALF])
        assert plan.direction == (1, -1)
        assert plan.alpha == HALF
        assert plan.beta == HALF

    def test_guard_limits_the_step(self):
        guard = Constraint("B0", {0: Fraction(2), 1: Fraction(1)}, Fraction(3, 2))
        current = [Fraction(1, 4), Fraction(3, 4)]
        plan = plan_rand_move(_pair_system([guard]), current)
        assert plan.alpha == Fraction(1, 4)
        assert plan.beta == Fraction(1, 4)
        outcomes = {rand_move(_pair_system([guard]), current, np.random.default_rng(s)) for s in range(40)}
        assert outcomes == {(HALF, HALF), (Fraction(0), Fraction(1))}

    def test_full_rank_has_no_direction(self):
        sub = Subsystem(
            columns=((0, 0),),
            equalities=(Constraint("F0", {0: Fraction(1)}, HALF),),
        )
        assert null_vector(sub) is None
        with pytest.raises(CaseEngineError):
            rand_move(sub, [HALF], np.random.default_rng(0))

    def test_null_vector_of_two_rows(self):
        rows = (
            Constraint("C0", {0: Fraction(1), 1: Fraction(1)}, Fraction(1)),
            Constraint("P0", {1: Fraction(2), 2: Fraction(3)}, Fraction(2)),
        )
        sub = Subsystem(columns=((0, 0), (0, 1), (1, 1)), equalities=rows)
        r = null_vector(sub)
        assert r == (Fraction(3, 2), Fraction(-3, 2), Fraction(1))
        assert all(row.rate(r) == 0 for row in rows)
        assert all(isinstance(v, Fraction) for v in r)

    def test_no_rows_moves_the_first_column(self):
        sub = Subsystem(columns=((0, 0), (1, 0)))
        assert null_vector(sub) == (1, 0)

    def test_mean_is_preserved(self):
        current = [Fraction(1, 4), Fraction(3, 4)]
        draws = np.array([
            [float(v) for v in rand_move(_pair_system(), current, np.random.default_rng(s))]
            for s in range(2000)
        ])
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - [0.25, 0.75]) <= 3 * se)


class TestForestify:
    def test_equal_bids_cycle_becomes_integral(self):
        inst = Instance.create(
            budgets=[2, 2],
            capacities=[2],
            queries=[(0, 1, 1, {0: 1, 1: 1}), (0, 2, 1, {0: 1, 1: 1})],
        )
        y = FractionalAssignment(y={e: HALF for e in [(0, 0), (0, 1), (1, 0), (1, 1)]})
        trace = RoundingTrace()
        result = forestify(inst, y, trace=trace)
        assert result.is_integral()
        assert fractional_revenue(inst, result) == 2
        assert len(trace) == 1
        assert trace.steps[0].beta == HALF
        assert trace.steps[0].branch == "forward"

    def test_unbalanced_cycle_reverses(self):
        inst = Instance.create(
            budgets=["3/2", "3/2"],
            capacities=[2],
            queries=[(0, 1, 1, {0: 2, 1: 1}), (0, 2, 1, {0: 1, 1: 1})],
        )
        y = FractionalAssignment(y={e: HALF for e in [(0, 0), (0, 1), (1, 0), (1, 1)]})
        trace = RoundingTrace()
        result = forestify(inst, y, trace=trace)
        assert result.value(0, 0) == Fraction(3, 4)
        assert result.value(1, 0) == 0
        assert result.value(1, 1) == 1
        assert result.value(0, 1) == 0
        assert fractional_revenue(inst, result) == Fraction(5, 2)
        assert trace.steps[0].branch == "reverse"

    def test_payments_are_kept_exactly(self, square, square_cycle):
        result = forestify(square, square_cycle)
        assert advertiser_payments(square, result) == advertiser_payments(square, square_cycle)
        assert support_forest(square, result).is_forest()
        assert result.value(1, 1) == 0
        assert result.value(0, 1) == Fraction(2, 3)

    @pytest.mark.parametrize("seed", range(6))
    def test_realized_solutions_end_acyclic(self, seed):
        inst = gen_random_instance(3, 6, 2, seed=seed)
        scenario = sample_scenario(inst, np.random.default_rng(seed))
        y, objective = realized_lp(inst, scenario)
        result = forestify(inst, y)
        assert fractional_revenue(inst, result) == objective
        assert SupportForest.from_values(result.y).is_forest()


class TestCases:
    def test_two_leaf_advertisers(self, shared_query):
        y = FractionalAssignment(y={(0, 0): HALF, (1, 0): HALF})
        branches = []
        for seed in range(200):
            x, trace = round_offline(shared_query, Scenario(arrived=(True,)), y, np.random.default_rng(seed))
            assert trace.case_counts() == {"i": 1}
            branches.append(trace.steps[0].branch)
            assert len(x.assigned) == 1
        share = branches.count("+") / len(branches)
        assert abs(share - 0.5) <= 3 * np.sqrt(0.25 / len(branches))

    def test_chain_through_tight_customer(self):
        inst = Instance.create(
            budgets=[HALF, HALF],
            capacities=[1],
            queries=[(0, 1, 1, {0: 1}), (0, 2, 1, {1: 1})],
        )
        y = FractionalAssignment(y={(0, 0): HALF, (1, 1): HALF})
        winners = set()
        for seed in range(30):
            x, trace = round_offline(inst, Scenario(arrived=(True, True)), y, np.random.default_rng(seed))
            assert trace.steps[0].case == "ii.5"
            assert len(x.assigned) == 1
            check_assignment(inst, x)
            winners.add(tuple(x.assigned.items()))
        assert winners == {((0, 0),), ((1, 1),)}

    def test_trace_serializes_to_json_lines(self, square, square_cycle):
        _, trace = round_offline(square, Scenario(arrived=(True, True)), square_cycle, np.random.default_rng(3))
        lines = trace.to_jsonl().splitlines()
        assert len(lines) == len(trace)
        first = json.loads(lines[0])
        assert first["case"] == "cycle-break"
        assert first["payments"] == ["3/2", "5/3"]


class TestSolveOffline:
    def test_ratio_bound(self, square):
        assert approx_ratio_bound(square) == Fraction(4 - Fraction(3, 10), 4)
        inst = Instance.create(budgets=[1], capacities=[1], queries=[(0, 1, 1, {0: 2})])
        with pytest.raises(PreconditionError):
            approx_ratio_bound(inst)

    def test_bids_above_budget_are_truncated(self):
        inst = Instance.create(budgets=[1], capacities=[1], queries=[(0, 1, 1, {0: 2})])
        result = solve_offline(inst, Scenario(arrived=(True,)), np.random.default_rng(0))
        assert result.revenue == 1
        assert result.lp_objective == 1
        assert result.bound == Fraction(3, 4)

    @pytest.mark.parametrize("seed", range(6))
    def test_random_instances_keep_every_constraint(self, seed):
        inst = gen_random_instance(3, 6, 2, seed=seed)
        for trial in range(8):
            rng = trial_rng(seed, trial)
            scenario = sample_scenario(inst, rng)
            result = solve_offline(inst, scenario, rng)
            check_assignment(inst, result.assignment, scenario)
            assert result.revenue <= result.lp_objective

    def test_payments_are_a_martingale(self, square, square_cycle):
        runs = 600
        spend = np.array([
            [float(v) for v in advertiser_spend(square, round_offline(
                square, Scenario(arrived=(True, True)), square_cycle, np.random.default_rng(s)
            )[0])]
            for s in range(runs)
        ])
        target = np.array([1.5, 5 / 3])
        se = spend.std(axis=0, ddof=1) / np.sqrt(runs)
        assert np.all(np.abs(spend.mean(axis=0) - target) <= 3 * se + 1e-9)


def _round_many(inst, y, runs):
    scenario = Scenario.all_arrived(inst)
    return [round_offline(inst, scenario, y, np.random.default_rng(s)) for s in range(runs)]


def _usage(inst, x):
    usage = [0] * inst.s
    for j in x.assigned:
        usage[inst.queries[j].customer] += 1
    return usage


def _assert_spend_mean(inst, results, target):
    spend = np.array([[float(v) for v in advertiser_spend(inst, x)] for x, _ in results])
    se = spend.std(axis=0, ddof=1) / np.sqrt(len(results))
    assert np.all(np.abs(spend.mean(axis=0) - np.array(target)) <= 3 * se + 1e-9)


def _two_trees(budgets, second_bid):
    """a0 on q0 (customer 0) and q1 (customer 1); a1 on q2 (customer 0) and q3 (customer 1); both customers hold one ad."""
    return Instance.create(
        budgets=budgets,
        capacities=[1, 1],
        queries=[
            (0, 1, 1, {0: 1}),
            (1, 1, 1, {0: 2}),
            (0, 2, 1, {1: second_bid}),
            (1, 2, 1, {1: second_bid}),
        ],
    )


TWO_TREES_HALF = FractionalAssignment(y={e: HALF for e in [(0, 0), (0, 1), (1, 2), (1, 3)]})
ONE_ADVERTISER_HALF = FractionalAssignment(y={(0, 0): HALF, (0, 1): HALF})


class TestCaseCoverage:
    def test_slack_leaf_queries_of_one_customer(self):
        inst = Instance.create(budgets=[10], capacities=[2], queries=[(0, 1, 1, {0: 1}), (0, 2, 1, {0: 2})])
        results = _round_many(inst, ONE_ADVERTISER_HALF, 200)
        for x, trace in results:
            assert [s.case for s in trace] == ["ii.1", "ii.4"]
            first = trace.steps[0]
            assert first.alpha == first.beta == Fraction(1, 4)
            assert first.payments == (Fraction(3, 2),)
            assert first.updates in (
                {(0, 0): Fraction(1), (0, 1): Fraction(1, 4)},
                {(0, 0): Fraction(0), (0, 1): Fraction(3, 4)},
            )
            check_assignment(inst, x)
        _assert_spend_mean(inst, results, [1.5])

    def test_slack_leaf_queries_of_two_customers(self):
        inst = Instance.create(budgets=[10], capacities=[1, 1], queries=[(0, 1, 1, {0: 1}), (1, 1, 1, {0: 2})])
        results = _round_many(inst, ONE_ADVERTISER_HALF, 200)
        for x, trace in results:
            assert [s.case for s in trace] == ["ii.2", "ii.4"]
            assert trace.steps[0].payments == (Fraction(3, 2),)
            check_assignment(inst, x)
        _assert_spend_mean(inst, results, [1.5])

    def test_tight_customer_closes_deterministically(self):
        inst = Instance.create(budgets=[10], capacities=[1], queries=[(0, 1, 1, {0: 1}), (0, 2, 1, {0: 2})])
        results = _round_many(inst, ONE_ADVERTISER_HALF, 200)
        for x, trace in results:
            assert [s.case for s in trace] == ["ii.3", "ii.4"]
            first = trace.steps[0]
            assert first.branch == "det"
            assert first.updates == {(0, 0): Fraction(0), (0, 1): Fraction(3, 4)}
            assert first.payments == (Fraction(3, 2),)
            assert 0 not in x.assigned
        _assert_spend_mean(inst, results, [1.5])

    def test_whole_system_keeps_tight_customers(self):
        inst = _two_trees([10, 10], second_bid=2)
        results = _round_many(inst, TWO_TREES_HALF, 1000)
        for x, trace in results:
            assert trace.case_counts() == {"system": 2}
            assert _usage(inst, x) == [1, 1]
            check_assignment(inst, x)
        _assert_spend_mean(inst, results, [1.5, 2.0])

    def test_tight_budgets_fall_back_to_assignment_and_capacity_rows(self):
        inst = _two_trees([Fraction(3, 2), 1], second_bid=1)
        results = _round_many(inst, TWO_TREES_HALF, 1000)
        for x, trace in results:
            assert [s.case for s in trace] == ["iii", "ii.5"]
            assert _usage(inst, x) == [1, 1]
            check_assignment(inst, x)
        _assert_spend_mean(inst, results, [1.5, 1.0])


class TestRandomInstances:
    @pytest.mark.parametrize("seed", range(3))
    def test_payments_are_a_martingale(self, seed):
        inst = gen_random_instance(3, 6, 2, seed=seed)
        scenario = sample_scenario(inst, np.random.default_rng(100 + seed))
        y, objective = realized_lp(inst, scenario)
        runs = 300
        spend = np.array([
            [float(v) for v in advertiser_spend(inst, solve_offline(
                inst, scenario, trial_rng(seed, t), y_star=y, lp_objective=objective
            ).assignment)]
            for t in range(runs)
        ])
        target = np.array([float(v) for v in advertiser_payments(inst, y)])
        se = spend.std(axis=0, ddof=1) / np.sqrt(runs)
        assert np.all(np.abs(spend.mean(axis=0) - target) <= 3 * se + 1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_ratio_bound_holds_on_average(self, seed):
        inst = gen_random_instance(3, 6, 2, seed=seed)
        bound = approx_ratio_bound(inst)
        gaps = []
        for t in range(200):
            rng = trial_rng(seed, t)
            result = solve_offline(inst, sample_scenario(inst, rng), rng)
            assert result.bound == bound
            gaps.append(float(result.revenue - bound * result.lp_objective))
        gaps = np.array(gaps)
        assert gaps.mean() >= -3 * gaps.std(ddof=1) / np.sqrt(len(gaps))
