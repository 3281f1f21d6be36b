"""
Online Allocators

Stream-driven allocators fed by an expectation LP solution x*:
- IP_B: hand an arrived query j to advertiser i with probability x*_ij / p_j
- IP_C: the same draw, then accept only if the customer's knapsack tables
  say the bid beats the value of keeping the slot
- IP_BC: IP_C mechanics on an LP_BC solution

One numpy Generator feeds every run. Each arrival consumes exactly one
uniform draw (advertiser choice) before any acceptance test, so a seed
fixes the whole run. Budgets are never checked while allocating; revenue
caps each advertiser's spend at its budget.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from adcell.errors import InfeasibleSolution, InstanceError, PreconditionError
from adcell.services.knapsack import (
    Decision,
    KnapsackInstance,
    KnapsackItem,
    KnapsackPolicy,
    knapsack_decide,
    knapsack_dp,
)
from adcell.services.lp import LpSolution, Variant, build_lp, solve_lp, to_fractional_assignment
from adcell.services.model import (
    ZERO,
    FractionalAssignment,
    Instance,
    Scenario,
    exclusivity_groups,
    validate_scenario,
)

logger = logging.getLogger(__name__)


class Outcome(str, Enum):
    ALLOCATED = "allocated"
    DISCARDED = "discarded"        # the draw chose no advertiser
    REJECTED = "rejected"          # the knapsack test kept the slot
    NO_CAPACITY = "no-capacity"    # customer already full
    NO_ARRIVAL = "no-arrival"


@dataclass(frozen=True)
class StreamEvent:
    time: int
    group: int
    customer: int
    arrived_query: Optional[int] = None


@dataclass(frozen=True)
class AllocationDecision:
    event: int
    query: Optional[int]
    outcome: Outcome
    advertiser: Optional[int] = None


@dataclass
class AllocationLog:
    decisions: List[AllocationDecision] = field(default_factory=list)
    spend: List[Fraction] = field(default_factory=list)
    usage: List[int] = field(default_factory=list)

    @classmethod
    def empty(cls, inst: Instance) -> "AllocationLog":
        return cls(spend=[ZERO] * inst.m, usage=[0] * inst.s)

    def allocated(self) -> Dict[int, int]:
        return {d.query: d.advertiser for d in self.decisions if d.outcome is Outcome.ALLOCATED}


@dataclass(frozen=True)
class ExpectationLp:
    variant: Variant
    x_star: FractionalAssignment
    objective: Fraction


@dataclass(frozen=True)
class DpTables:
    """Per customer: knapsack tables over (advertiser, query) pairs with mass x*_ij, and time -> partition index."""
    policies: Dict[int, KnapsackPolicy]
    partition_of: Dict[int, Dict[int, int]]

    def expected(self, customer: int, t: int, r: int) -> Fraction:
        return self.policies[customer].expected(t, r)

    def decide(self, customer: int, time: int, r: int, value: Fraction) -> Decision:
        t = self.partition_of[customer][time]
        return knapsack_decide(self.policies[customer], t, r, value)


def stream_from_scenario(inst: Instance, scenario: Scenario) -> List[StreamEvent]:
    """One event per exclusivity group, in (time, customer) order."""
    validate_scenario(inst, scenario)
    events = []
    for g, group in enumerate(exclusivity_groups(inst)):
        q = inst.queries[group[0]]
        arrived = next((j for j in group if scenario.arrived[j]), None)
        events.append(StreamEvent(time=q.time, group=g, customer=q.customer, arrived_query=arrived))
    return events


def scenario_from_stream(inst: Instance, stream: Sequence[StreamEvent]) -> Scenario:
    """Arrival flags of an externally supplied stream; events must list every group once, in order."""
    groups = exclusivity_groups(inst)
    if len(stream) != len(groups):
        raise InstanceError(f"Stream has {len(stream)} events for {len(groups)} arrival groups")
    arrived = [False] * inst.n
    for g, (event, group) in enumerate(zip(stream, groups)):
        q = inst.queries[group[0]]
        if (event.group, event.time, event.customer) != (g, q.time, q.customer):
            raise InstanceError(
                f"Stream event {g} is (group {event.group}, time {event.time}, customer {event.customer}), "
                f"expected (group {g}, time {q.time}, customer {q.customer})"
            )
        if event.arrived_query is not None:
            if event.arrived_query not in group:
                raise InstanceError(f"Stream event {g}: query {event.arrived_query} is not in group {group}")
            arrived[event.arrived_query] = True
    return Scenario(arrived=tuple(arrived))


def _as_assignment(solution: Union[LpSolution, FractionalAssignment, ExpectationLp]) -> FractionalAssignment:
    if isinstance(solution, ExpectationLp):
        return solution.x_star
    if isinstance(solution, LpSolution):
        return FractionalAssignment(y={e: v for e, v in zip(solution.columns, solution.values) if v != 0})
    return solution


def check_online_solution(inst: Instance, x_star: FractionalAssignment) -> None:
    """Every x*_ij <= p_j and every query's total mass <= p_j."""
    totals: Dict[int, Fraction] = {}
    for (i, j), v in sorted(x_star.y.items()):
        p = inst.queries[j].prob
        if v < 0 or v > p:
            raise InfeasibleSolution(f"x*[{i},{j}] = {v} outside [0, p_j = {p}]")
        totals[j] = totals.get(j, ZERO) + v
    for j, total in sorted(totals.items()):
        if total > inst.queries[j].prob:
            raise InfeasibleSolution(f"query {j} carries mass {total} > p_j = {inst.queries[j].prob}")


def solve_expectation(inst: Instance, variant: Variant) -> ExpectationLp:
    lp = build_lp(inst, variant)
    sol = solve_lp(lp)
    x_star = to_fractional_assignment(lp, sol)
    check_online_solution(inst, x_star)
    logger.info(f"Expectation LP_{variant.value.upper()} objective {sol.objective_value} ({sol.iterations} pivots)")
    return ExpectationLp(variant=variant, x_star=x_star, objective=sol.objective_value)


def draw_advertiser(inst: Instance, x_star: FractionalAssignment, query: int, rng: np.random.Generator) -> Optional[int]:
    """Advertiser i with probability x*_ij / p_j, None with the leftover probability; one uniform draw."""
    u = rng.random()
    p = inst.queries[query].prob
    if p == 0:
        return None
    cumulative = ZERO
    for i in sorted(inst.queries[query].bids):
        cumulative += x_star.value(i, query) / p
        if u < cumulative:
            return i
    return None


def _run(
    inst: Instance,
    x_star: FractionalAssignment,
    stream: Sequence[StreamEvent],
    rng: np.random.Generator,
    dp: Optional[DpTables],
) -> AllocationLog:
    log = AllocationLog.empty(inst)
    for n, event in enumerate(stream):
        j = event.arrived_query
        if j is None:
            log.decisions.append(AllocationDecision(event=n, query=None, outcome=Outcome.NO_ARRIVAL))
            continue
        i = draw_advertiser(inst, x_star, j, rng)
        k = inst.queries[j].customer
        remaining = inst.customers[k].capacity - log.usage[k]
        if i is None:
            outcome = Outcome.DISCARDED
        elif remaining <= 0:
            outcome = Outcome.NO_CAPACITY
        elif dp is not None and dp.decide(k, inst.queries[j].time, remaining, inst.bid(i, j)) is Decision.SKIP:
            outcome = Outcome.REJECTED
        else:
            outcome = Outcome.ALLOCATED
            log.spend[i] += inst.bid(i, j)
            log.usage[k] += 1
        log.decisions.append(AllocationDecision(event=n, query=j, outcome=outcome, advertiser=i))
    return log


def allocate_ipb(
    inst: Instance,
    lp_sol: Union[LpSolution, FractionalAssignment, ExpectationLp],
    stream: Sequence[StreamEvent],
    rng: np.random.Generator,
) -> AllocationLog:
    """Algorithm for IP_B: allocate on the draw alone; a full customer discards."""
    x_star = _as_assignment(lp_sol)
    check_online_solution(inst, x_star)
    return _run(inst, x_star, stream, rng, dp=None)


def build_dp_tables(inst: Instance, lp_sol: Union[LpSolution, FractionalAssignment, ExpectationLp]) -> DpTables:
    """
    Per customer k a knapsack over its (i, j) pairs: value u_ij, mass x*_ij,
    partition = arrival time. Capacity is min(c_k, number of partitions),
    which leaves every table entry unchanged.
    """
    x_star = _as_assignment(lp_sol)
    check_online_solution(inst, x_star)
    policies: Dict[int, KnapsackPolicy] = {}
    partition_of: Dict[int, Dict[int, int]] = {}
    for k, customer in enumerate(inst.customers):
        items = []
        for j, q in enumerate(inst.queries):
            if q.customer != k:
                continue
            if not q.bids:
                items.append(KnapsackItem(value=ZERO, prob=ZERO, partition=q.time))
            for i, u in sorted(q.bids.items()):
                items.append(KnapsackItem(value=u, prob=x_star.value(i, j), partition=q.time))
        times = sorted({item.partition for item in items})
        ki = KnapsackInstance(capacity=min(customer.capacity, len(times)), items=tuple(items))
        policies[k] = knapsack_dp(ki)
        partition_of[k] = {time: t for t, time in enumerate(times, start=1)}
    return DpTables(policies=policies, partition_of=partition_of)


def allocate_ipc(
    inst: Instance,
    lp_sol: Union[LpSolution, FractionalAssignment, ExpectationLp],
    dp: DpTables,
    stream: Sequence[StreamEvent],
    rng: np.random.Generator,
) -> AllocationLog:
    """Algorithm for IP_C: draw, then allocate iff u_ij + E[k,t+1][r-1] >= E[k,t+1][r]."""
    x_star = _as_assignment(lp_sol)
    check_online_solution(inst, x_star)
    return _run(inst, x_star, stream, rng, dp=dp)


def allocate_ipbc(
    inst: Instance,
    lp_sol: Union[LpSolution, FractionalAssignment, ExpectationLp],
    dp: DpTables,
    stream: Sequence[StreamEvent],
    rng: np.random.Generator,
) -> AllocationLog:
    """IP_C mechanics driven by an LP_BC solution."""
    return allocate_ipc(inst, lp_sol, dp, stream, rng)


def allocation_revenue(inst: Instance, log: AllocationLog) -> Fraction:
    return sum((min(s, inst.budget(i)) for i, s in enumerate(log.spend)), ZERO)


def uncapped_spend(log: AllocationLog) -> Fraction:
    return sum(log.spend, ZERO)


def min_sum_bound(mu: float, capacity: float) -> float:
    """(1 - e^{-mu/C}) * C."""
    if capacity <= 0:
        raise PreconditionError(f"Capacity must be positive, got {capacity}")
    return (1.0 - math.exp(-mu / capacity)) * capacity


def min_sum_bound_check(samples: Union[Sequence[float], Sequence[Sequence[float]]], capacity: float, mu: float) -> bool:
    """
    samples holds one row of variable outcomes per trial (or one total per
    trial). True iff mean(min(sum, C)) >= (1 - e^{-mu/C}) C - 3 SE.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim == 2:
        data = data.sum(axis=1)
    clipped = np.minimum(data, float(capacity))
    if clipped.size < 2:
        raise PreconditionError("min_sum_bound_check needs at least two trials")
    mean = float(clipped.mean())
    std_error = float(clipped.std(ddof=1)) / math.sqrt(clipped.size)
    return mean >= min_sum_bound(float(mu), float(capacity)) - 3 * std_error
