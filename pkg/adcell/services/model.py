"""
Problem Data Model

Advertisers, queries and customers of the budgeted and capacitated ad
allocation problem, plus the accounting shared by every other service:
- instance validation (violations are reported, never raised)
- exclusivity groups (queries sharing customer and time)
- integral and fractional revenue

All money and probability values are exact Fractions. Bids of zero are not
stored: a pair (i, j) exists only when u_ij > 0.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from adcell.errors import InstanceError, StructuralError

logger = logging.getLogger(__name__)

Rational = Union[Fraction, int, str]
Edge = Tuple[int, int]  # (advertiser i, query j)

ZERO = Fraction(0)
ONE = Fraction(1)


def to_fraction(value: Union[Rational, float]) -> Fraction:
    """Parse "p/q", decimal strings, ints and Fractions exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InstanceError(f"Expected a rational number, got {value!r}")
    if isinstance(value, float):
        # Go through the shortest repr so 0.1 means 1/10, not the binary double
        return Fraction(repr(value))
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as e:
        raise InstanceError(f"Cannot parse rational {value!r}: {e}")


def format_fraction(value: Fraction) -> str:
    """Render as "p/q" (or "p" for integers)."""
    return str(value)


@dataclass(frozen=True)
class Advertiser:
    budget: Fraction


@dataclass(frozen=True)
class Query:
    customer: int
    time: int
    prob: Fraction
    bids: Mapping[int, Fraction] = field(default_factory=dict)

    def bid(self, advertiser: int) -> Fraction:
        return self.bids.get(advertiser, ZERO)


@dataclass(frozen=True)
class Customer:
    capacity: int


@dataclass(frozen=True)
class Instance:
    advertisers: Tuple[Advertiser, ...] = ()
    queries: Tuple[Query, ...] = ()
    customers: Tuple[Customer, ...] = ()

    @property
    def m(self) -> int:
        return len(self.advertisers)

    @property
    def n(self) -> int:
        return len(self.queries)

    @property
    def s(self) -> int:
        return len(self.customers)

    def bid(self, advertiser: int, query: int) -> Fraction:
        return self.queries[query].bid(advertiser)

    def budget(self, advertiser: int) -> Fraction:
        return self.advertisers[advertiser].budget

    def edges(self) -> List[Edge]:
        """All (advertiser, query) pairs with a positive bid, sorted."""
        return sorted(
            (i, j)
            for j, q in enumerate(self.queries)
            for i, u in q.bids.items()
            if u > 0
        )

    def queries_of(self, customer: int) -> List[int]:
        return [j for j, q in enumerate(self.queries) if q.customer == customer]

    @classmethod
    def create(
        cls,
        budgets: Sequence[Rational],
        capacities: Sequence[int],
        queries: Sequence[Tuple[int, int, Rational, Mapping[int, Rational]]],
    ) -> "Instance":
        """
        Build an instance from plain values.

        Each query is (customer, time, prob, {advertiser: bid}); zero bids
        are dropped.
        """
        built = []
        for customer, time, prob, bids in queries:
            parsed = {int(i): to_fraction(u) for i, u in bids.items()}
            built.append(Query(
                customer=int(customer),
                time=int(time),
                prob=to_fraction(prob),
                bids={i: u for i, u in sorted(parsed.items()) if u != 0},
            ))
        return cls(
            advertisers=tuple(Advertiser(budget=to_fraction(b)) for b in budgets),
            queries=tuple(built),
            customers=tuple(Customer(capacity=c) for c in capacities),
        )


@dataclass(frozen=True)
class Scenario:
    """Realized arrival indicators, one per query."""
    arrived: Tuple[bool, ...]

    @classmethod
    def all_arrived(cls, inst: Instance) -> "Scenario":
        return cls(arrived=tuple(True for _ in inst.queries))

    def indicator(self, query: int) -> Fraction:
        return ONE if self.arrived[query] else ZERO


@dataclass(frozen=True)
class FractionalAssignment:
    """Sparse y_ij values; absent pairs are zero."""
    y: Mapping[Edge, Fraction] = field(default_factory=dict)

    def value(self, advertiser: int, query: int) -> Fraction:
        return self.y.get((advertiser, query), ZERO)

    def support(self) -> List[Edge]:
        return sorted(e for e, v in self.y.items() if v != 0)

    def strictly_fractional(self) -> List[Edge]:
        return sorted(e for e, v in self.y.items() if 0 < v < 1)

    def is_integral(self) -> bool:
        return all(v in (ZERO, ONE) for v in self.y.values())


@dataclass(frozen=True)
class IntegralAssignment:
    """Partial map query -> advertiser."""
    assigned: Mapping[int, int] = field(default_factory=dict)

    def queries_of(self, advertiser: int) -> List[int]:
        return sorted(j for j, i in self.assigned.items() if i == advertiser)


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.is_valid:
            return "valid"
        return "; ".join(str(v) for v in self.violations)


def exclusivity_groups(inst: Instance) -> List[List[int]]:
    """
    Partition query indices by (customer, time).

    Groups are ordered by time, then customer; indices inside a group are
    ascending.
    """
    groups: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for j, q in enumerate(inst.queries):
        groups[(q.time, q.customer)].append(j)
    return [groups[key] for key in sorted(groups)]


def validate_instance(inst: Instance) -> ValidationReport:
    """List every invariant violation; an empty report means valid."""
    violations: List[Violation] = []

    for i, adv in enumerate(inst.advertisers):
        if not adv.budget > 0:
            violations.append(Violation(f"advertisers[{i}].budget", f"budget must be > 0, got {adv.budget}"))

    for k, cust in enumerate(inst.customers):
        if not isinstance(cust.capacity, int) or isinstance(cust.capacity, bool):
            violations.append(Violation(f"customers[{k}].capacity", f"capacity must be an integer, got {cust.capacity!r}"))
        elif cust.capacity < 1:
            violations.append(Violation(f"customers[{k}].capacity", f"capacity must be >= 1, got {cust.capacity}"))

    for j, q in enumerate(inst.queries):
        if not 0 <= q.customer < inst.s:
            violations.append(Violation(f"queries[{j}].customer", f"customer index {q.customer} outside [0, {inst.s})"))
        if not 0 <= q.prob <= 1:
            violations.append(Violation(f"queries[{j}].prob", f"probability must lie in [0, 1], got {q.prob}"))
        for i, u in sorted(q.bids.items()):
            if not 0 <= i < inst.m:
                violations.append(Violation(f"queries[{j}].bids[{i}]", f"advertiser index {i} outside [0, {inst.m})"))
            if u < 0:
                violations.append(Violation(f"queries[{j}].bids[{i}]", f"bid must be >= 0, got {u}"))

    for group in exclusivity_groups(inst):
        total = sum((inst.queries[j].prob for j in group), ZERO)
        if total > 1:
            q = inst.queries[group[0]]
            violations.append(Violation(
                f"groups[customer={q.customer},time={q.time}]",
                f"mutually exclusive queries {group} have probability sum {total} > 1",
            ))

    return ValidationReport(violations=tuple(violations))


def ensure_valid(inst: Instance) -> Instance:
    report = validate_instance(inst)
    if not report.is_valid:
        raise InstanceError(f"Invalid instance: {report}", report=report)
    return inst


def validate_scenario(inst: Instance, scenario: Scenario) -> Scenario:
    """Check length and that at most one query of each group arrived."""
    if len(scenario.arrived) != inst.n:
        raise InstanceError(f"Scenario has {len(scenario.arrived)} flags for {inst.n} queries")
    for group in exclusivity_groups(inst):
        arrived = [j for j in group if scenario.arrived[j]]
        if len(arrived) > 1:
            raise InstanceError(f"Mutually exclusive queries {arrived} arrived together")
    return scenario


def truncate_bids(inst: Instance) -> Instance:
    """Replace every bid u_ij by min(u_ij, b_i); the integral optimum is unchanged."""
    queries = tuple(
        Query(
            customer=q.customer,
            time=q.time,
            prob=q.prob,
            bids={i: min(u, inst.budget(i)) for i, u in q.bids.items()},
        )
        for q in inst.queries
    )
    return Instance(advertisers=inst.advertisers, queries=queries, customers=inst.customers)


def check_assignment(
    inst: Instance, x: IntegralAssignment, scenario: Optional[Scenario] = None
) -> None:
    """Raise StructuralError naming the first broken constraint."""
    usage: Dict[int, int] = defaultdict(int)
    for j, i in sorted(x.assigned.items()):
        if not 0 <= j < inst.n:
            raise StructuralError(f"assignment: query index {j} outside [0, {inst.n})")
        if not 0 <= i < inst.m:
            raise StructuralError(f"assignment: advertiser index {i} outside [0, {inst.m})")
        if inst.bid(i, j) <= 0:
            raise StructuralError(f"assignment: advertiser {i} has no bid on query {j}")
        if scenario is not None and not scenario.arrived[j]:
            raise StructuralError(f"assignment: query {j} did not arrive")
        usage[inst.queries[j].customer] += 1
    for k, used in sorted(usage.items()):
        if used > inst.customers[k].capacity:
            raise StructuralError(
                f"capacity (C): customer {k} holds {used} ads, capacity {inst.customers[k].capacity}"
            )


def advertiser_spend(inst: Instance, x: IntegralAssignment) -> List[Fraction]:
    """Uncapped spend Σ_{j assigned to i} u_ij per advertiser."""
    spend = [ZERO] * inst.m
    for j, i in x.assigned.items():
        spend[i] += inst.bid(i, j)
    return spend


def integral_revenue(
    inst: Instance, x: IntegralAssignment, scenario: Optional[Scenario] = None
) -> Fraction:
    """Σ_i min(Σ_{j assigned to i} u_ij, b_i)."""
    check_assignment(inst, x, scenario)
    spend = advertiser_spend(inst, x)
    return sum((min(s, inst.budget(i)) for i, s in enumerate(spend)), ZERO)


def advertiser_payments(inst: Instance, y: Union[FractionalAssignment, Mapping[Edge, Fraction]]) -> List[Fraction]:
    """Uncapped fractional payments Σ_j y_ij u_ij per advertiser."""
    values = y.y if isinstance(y, FractionalAssignment) else y
    payments = [ZERO] * inst.m
    for (i, j), v in values.items():
        if v:
            payments[i] += v * inst.bid(i, j)
    return payments


def fractional_revenue(inst: Instance, y: FractionalAssignment) -> Fraction:
    """Σ_i Σ_j y_ij u_ij, the LP objective; budgets must hold."""
    per_query: Dict[int, Fraction] = defaultdict(Fraction)
    for (i, j), v in sorted(y.y.items()):
        if not 0 <= v <= 1:
            raise StructuralError(f"y[{i},{j}] = {v} outside [0, 1]")
        if v and inst.bid(i, j) <= 0:
            raise StructuralError(f"y[{i},{j}] = {v} on a pair without a bid")
        per_query[j] += v
    for j, total in sorted(per_query.items()):
        if total > 1:
            raise StructuralError(f"assignment (F): query {j} receives total {total} > 1")

    payments = advertiser_payments(inst, y)
    for i, paid in enumerate(payments):
        if paid > inst.budget(i):
            raise StructuralError(f"budget (B): advertiser {i} pays {paid} > budget {inst.budget(i)}")
    return sum(payments, ZERO)


def assignment_from_values(values: Mapping[Edge, Fraction]) -> IntegralAssignment:
    """Turn a 0/1 map over pairs into query -> advertiser."""
    assigned: Dict[int, int] = {}
    for (i, j), v in sorted(values.items()):
        if v == ONE:
            if j in assigned:
                raise StructuralError(f"assignment (F): query {j} given to advertisers {assigned[j]} and {i}")
            assigned[j] = i
        elif v != ZERO:
            raise StructuralError(f"x[{i},{j}] = {v} is not integral")
    return IntegralAssignment(assigned=assigned)


def max_bid_budget_ratio(inst: Instance) -> Fraction:
    """max_i max_j u_ij / b_i over positive bids (0 when there are none)."""
    ratios: Iterable[Fraction] = (inst.bid(i, j) / inst.budget(i) for i, j in inst.edges())
    return max(ratios, default=ZERO)
