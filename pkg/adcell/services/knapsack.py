"""
Stochastic Uniform Knapsack

Unit-size items arrive partition by partition (one partition per arrival
time, at most one item of a partition arrives). The optimal online policy
comes from backward induction over partitions:

    E[t][r] = sum_{j in T_t} p_j * max(v_j + E[t+1][r-1], E[t+1][r])
              + (1 - sum_{j in T_t} p_j) * E[t+1][r]

with E[t][0] = 0 and E[u+1][r] = 0. Its value E[1][C] lies between half of
O_e = sum_j p_j v_j and O_e whenever sum_j p_j <= C.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

from adcell import config
from adcell.errors import InstanceError, PreconditionError
from adcell.services.model import ONE, ZERO, Instance

logger = logging.getLogger(__name__)


class Decision(str, Enum):
    TAKE = "take"
    SKIP = "skip"


@dataclass(frozen=True)
class KnapsackItem:
    value: Fraction
    prob: Fraction
    partition: int


@dataclass(frozen=True)
class KnapsackInstance:
    capacity: int
    items: Tuple[KnapsackItem, ...] = ()

    def partitions(self) -> List[int]:
        """Distinct partition keys in arrival order; position t-1 is partition t."""
        return sorted({item.partition for item in self.items})

    def grouped(self) -> List[List[KnapsackItem]]:
        groups: Dict[int, List[KnapsackItem]] = defaultdict(list)
        for item in self.items:
            groups[item.partition].append(item)
        return [groups[key] for key in self.partitions()]

    def total_prob(self) -> Fraction:
        return sum((item.prob for item in self.items), ZERO)


@dataclass(frozen=True)
class KnapsackPolicy:
    """table[t-1][r] holds E[t][r] for t in [1, u+1] and r in [0, capacity]."""
    table: Tuple[Tuple[Fraction, ...], ...]
    partitions: Tuple[int, ...]
    capacity: int

    @property
    def u(self) -> int:
        return len(self.partitions)

    def expected(self, t: int, r: int) -> Fraction:
        """E[t][r]; remaining capacity above the table's capacity behaves like the capacity."""
        if r <= 0:
            return ZERO
        return self.table[t - 1][min(r, self.capacity)]

    def value(self) -> Fraction:
        return self.expected(1, self.capacity)


def validate_knapsack(ki: KnapsackInstance) -> None:
    if isinstance(ki.capacity, bool) or not isinstance(ki.capacity, int) or ki.capacity < 0:
        raise InstanceError(f"Knapsack capacity must be a nonnegative integer, got {ki.capacity!r}")
    limit = config.settings.knapsack_max_capacity
    if ki.capacity > limit:
        raise PreconditionError(f"Knapsack capacity {ki.capacity} exceeds the configured limit {limit}")
    for n, item in enumerate(ki.items):
        if item.value < 0:
            raise InstanceError(f"items[{n}].value must be >= 0, got {item.value}")
        if not 0 <= item.prob <= 1:
            raise InstanceError(f"items[{n}].prob must lie in [0, 1], got {item.prob}")
    for t, group in enumerate(ki.grouped(), start=1):
        total = sum((item.prob for item in group), ZERO)
        if total > 1:
            raise InstanceError(f"Partition {t} has probability sum {total} > 1")


def knapsack_dp(ki: KnapsackInstance) -> KnapsackPolicy:
    """Fill E[t][r] by backward induction, exactly."""
    validate_knapsack(ki)
    groups = ki.grouped()
    u, cap = len(groups), ki.capacity
    table: List[List[Fraction]] = [[ZERO] * (cap + 1) for _ in range(u + 1)]
    for t in range(u - 1, -1, -1):
        later = table[t + 1]
        group = groups[t]
        rest = ONE - sum((item.prob for item in group), ZERO)
        for r in range(1, cap + 1):
            total = rest * later[r]
            for item in group:
                total += item.prob * max(item.value + later[r - 1], later[r])
            table[t][r] = total
    return KnapsackPolicy(
        table=tuple(tuple(row) for row in table),
        partitions=tuple(ki.partitions()),
        capacity=cap,
    )


def knapsack_decide(policy: KnapsackPolicy, t: int, r: int, v: Fraction) -> Decision:
    """Take iff r >= 1 and v + E[t+1][r-1] >= E[t+1][r]; ties take."""
    if r <= 0:
        return Decision.SKIP
    if not 1 <= t <= policy.u:
        raise PreconditionError(f"Partition index {t} outside [1, {policy.u}]")
    if v + policy.expected(t + 1, r - 1) >= policy.expected(t + 1, r):
        return Decision.TAKE
    return Decision.SKIP


def knapsack_oe(ki: KnapsackInstance) -> Fraction:
    return sum((item.prob * item.value for item in ki.items), ZERO)


def knapsack_expected_online(ki: KnapsackInstance) -> Fraction:
    """E[1][C], the optimal online value; within [O_e/2, O_e] when sum p <= C."""
    total = ki.total_prob()
    if total > ki.capacity:
        logger.warning(
            f"Item probabilities sum to {total} > capacity {ki.capacity}; the half bound is not guaranteed"
        )
    return knapsack_dp(ki).value()


def merge_partitions(ki: KnapsackInstance) -> KnapsackInstance:
    """
    Replace each partition by one item with p_t = sum p_j and
    v_t = sum v_j p_j / p_t. O_e is unchanged and E[1][C] can only drop.
    """
    merged = []
    for group in ki.grouped():
        prob = sum((item.prob for item in group), ZERO)
        mass = sum((item.prob * item.value for item in group), ZERO)
        merged.append(KnapsackItem(
            value=mass / prob if prob else ZERO,
            prob=prob,
            partition=group[0].partition,
        ))
    return KnapsackInstance(capacity=ki.capacity, items=tuple(merged))


def knapsack_from_customer(inst: Instance, customer: int) -> KnapsackInstance:
    """
    One item per query of the customer, worth its best bid; this is the
    customer's problem once budgets can no longer bind.
    """
    items = tuple(
        KnapsackItem(
            value=max(q.bids.values(), default=ZERO),
            prob=q.prob,
            partition=q.time,
        )
        for q in inst.queries
        if q.customer == customer
    )
    return KnapsackInstance(capacity=inst.customers[customer].capacity, items=items)


def check_policy(policy: KnapsackPolicy, items: Sequence[Sequence[KnapsackItem]]) -> List[str]:
    """Table properties that must hold exactly: boundary rows, the recursion, monotonicity and decreasing marginals."""
    problems = []
    for t in range(1, policy.u + 2):
        if policy.table[t - 1][0] != 0:
            problems.append(f"E[{t}][0] = {policy.table[t - 1][0]} != 0")
    for r in range(policy.capacity + 1):
        if policy.table[policy.u][r] != 0:
            problems.append(f"E[{policy.u + 1}][{r}] != 0")
    for t in range(1, policy.u + 1):
        group = items[t - 1]
        rest = ONE - sum((item.prob for item in group), ZERO)
        for r in range(1, policy.capacity + 1):
            expected = rest * policy.expected(t + 1, r) + sum(
                (item.prob * max(item.value + policy.expected(t + 1, r - 1), policy.expected(t + 1, r))
                 for item in group),
                ZERO,
            )
            if policy.expected(t, r) != expected:
                problems.append(f"E[{t}][{r}] breaks the recursion")
            if policy.expected(t, r) < policy.expected(t, r - 1):
                problems.append(f"E[{t}][{r}] < E[{t}][{r - 1}]")
            if policy.expected(t, r - 1) < Fraction(r - 1, r) * policy.expected(t, r):
                problems.append(f"E[{t}][{r - 1}] < ({r - 1}/{r}) E[{t}][{r}]")
    return problems
