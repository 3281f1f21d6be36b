"""
Exact brute-force baselines for desk-scale instances:
- offline_opt_exact: best integral allocation of one realized scenario
- expected_offline_opt_exact: its expectation over every scenario
- online_opt_exact: value of the optimal online policy by backward induction

Every enumeration checks its configured guard first and raises
SizeGuardError instead of approximating.
"""

import itertools
import logging
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Tuple

from adcell import config
from adcell.errors import SizeGuardError
from adcell.services.model import (
    ONE,
    ZERO,
    Instance,
    IntegralAssignment,
    Scenario,
    ensure_valid,
    exclusivity_groups,
    validate_scenario,
)

logger = logging.getLogger(__name__)


def scenario_count(inst: Instance) -> int:
    count = 1
    for group in exclusivity_groups(inst):
        count *= len(group) + 1
    return count


def scenario_distribution(inst: Instance) -> Iterator[Tuple[Scenario, Fraction]]:
    """Every scenario with positive probability, with that probability."""
    ensure_valid(inst)
    count = scenario_count(inst)
    limit = config.settings.oracle_max_scenarios
    if count > limit:
        raise SizeGuardError(f"{count} scenarios exceed the scenario guard {limit}")

    choices: List[List[Tuple[Optional[int], Fraction]]] = []
    for group in exclusivity_groups(inst):
        options: List[Tuple[Optional[int], Fraction]] = [
            (j, inst.queries[j].prob) for j in group if inst.queries[j].prob > 0
        ]
        rest = ONE - sum((inst.queries[j].prob for j in group), ZERO)
        if rest > 0:
            options.append((None, rest))
        choices.append(options)

    for combo in itertools.product(*choices):
        arrived = [False] * inst.n
        prob = ONE
        for j, p in combo:
            prob *= p
            if j is not None:
                arrived[j] = True
        yield Scenario(arrived=tuple(arrived)), prob


def offline_opt_exact(inst: Instance, scenario: Scenario) -> Tuple[Fraction, IntegralAssignment]:
    """Exhaustive search over {discard} plus every bidding advertiser for each arrived query."""
    validate_scenario(inst, scenario)
    arrived = [j for j in range(inst.n) if scenario.arrived[j]]
    size = (inst.m + 1) ** len(arrived)
    limit = config.settings.oracle_max_assignments
    if size > limit:
        raise SizeGuardError(f"(m+1)^n_arrived = {size} exceeds the assignment guard {limit}")

    budgets = [inst.budget(i) for i in range(inst.m)]
    # Optimistic completion: every later query pays its best bid
    best_bid = [max(inst.queries[j].bids.values(), default=ZERO) for j in arrived]
    tail = [ZERO] * (len(arrived) + 1)
    for t in range(len(arrived) - 1, -1, -1):
        tail[t] = tail[t + 1] + best_bid[t]

    spend = [ZERO] * inst.m
    usage = [0] * inst.s
    chosen: Dict[int, int] = {}
    best_value = -ONE
    best_choice: Dict[int, int] = {}

    def capped() -> Fraction:
        return sum((min(s, b) for s, b in zip(spend, budgets)), ZERO)

    def search(t: int) -> None:
        nonlocal best_value, best_choice
        value = capped()
        if t == len(arrived):
            if value > best_value:
                best_value, best_choice = value, dict(chosen)
            return
        if value + tail[t] <= best_value:
            return
        j = arrived[t]
        k = inst.queries[j].customer
        if usage[k] < inst.customers[k].capacity:
            for i, u in sorted(inst.queries[j].bids.items()):
                spend[i] += u
                usage[k] += 1
                chosen[j] = i
                search(t + 1)
                del chosen[j]
                usage[k] -= 1
                spend[i] -= u
        search(t + 1)

    search(0)
    return best_value, IntegralAssignment(assigned=best_choice)


def expected_offline_opt_exact(inst: Instance) -> Fraction:
    total = ZERO
    for scenario, prob in scenario_distribution(inst):
        value, _ = offline_opt_exact(inst, scenario)
        total += prob * value
    return total


def online_opt_exact(inst: Instance) -> Fraction:
    """
    Optimal online value. Groups are revealed in (time, customer) order; the
    state is remaining capacity per customer and spend per advertiser capped
    at its budget, so equal spends merge.
    """
    ensure_valid(inst)
    groups = exclusivity_groups(inst)
    outcomes = []
    for group in groups:
        options = [(j, inst.queries[j].prob) for j in group if inst.queries[j].prob > 0]
        rest = ONE - sum((inst.queries[j].prob for j in group), ZERO)
        outcomes.append((options, rest))

    budgets = tuple(inst.budget(i) for i in range(inst.m))
    limit = config.settings.oracle_max_states
    memo: Dict[Tuple[int, Tuple[int, ...], Tuple[Fraction, ...]], Fraction] = {}

    def value(g: int, usage: Tuple[int, ...], spend: Tuple[Fraction, ...]) -> Fraction:
        if g == len(groups):
            return ZERO
        key = (g, usage, spend)
        cached = memo.get(key)
        if cached is not None:
            return cached
        if len(memo) >= limit:
            raise SizeGuardError(f"online oracle state space exceeds the state guard {limit}")

        options, rest = outcomes[g]
        skip = value(g + 1, usage, spend)
        total = rest * skip
        for j, p in options:
            best = skip
            k = inst.queries[j].customer
            if usage[k] < inst.customers[k].capacity:
                next_usage = usage[:k] + (usage[k] + 1,) + usage[k + 1:]
                for i, u in sorted(inst.queries[j].bids.items()):
                    paid = min(spend[i] + u, budgets[i])
                    next_spend = spend[:i] + (paid,) + spend[i + 1:]
                    best = max(best, paid - spend[i] + value(g + 1, next_usage, next_spend))
            total += p * best
        memo[key] = total
        return total

    result = value(0, tuple([0] * inst.s), tuple([ZERO] * inst.m))
    logger.debug(f"online oracle explored {len(memo)} states")
    return result
