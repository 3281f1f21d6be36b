"""
Offline Iterative Rounding

Rounds an optimal LP_BC solution of a realized scenario to an integral
allocation while keeping every assignment (F) and capacity (C) row exact:
- forestify breaks every cycle of the strictly fractional support without
  changing any advertiser's payment
- the case engine repeatedly picks a small constraint subsystem on the
  support forest and moves along its null space (Rand-Move), or along a
  deterministic closing direction when the capacity of a tight customer
  links both ends of a path
- every step is logged in a RoundingTrace

Random steps keep E[x] unchanged, so each advertiser's uncapped payment is a
martingale over the run. Tightness is exact Fraction equality.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
import sympy

from adcell import config
from adcell.errors import CaseEngineError, PreconditionError
from adcell.schemas import AssignmentValue, RoundingStepRecord
from adcell.services.lp import Variant, build_lp, solve_lp, to_fractional_assignment
from adcell.services.model import (
    ONE,
    ZERO,
    Edge,
    FractionalAssignment,
    Instance,
    IntegralAssignment,
    Scenario,
    advertiser_payments,
    assignment_from_values,
    integral_revenue,
    max_bid_budget_ratio,
    truncate_bids,
    validate_scenario,
)

logger = logging.getLogger(__name__)

Node = Tuple[str, int]  # ("a", i) for advertisers, ("q", j) for queries


def _edge(u: Node, v: Node) -> Edge:
    adv, query = (u, v) if u[0] == "a" else (v, u)
    return (adv[1], query[1])


def _path_edges(nodes: Sequence[Node]) -> List[Edge]:
    return [_edge(nodes[t], nodes[t + 1]) for t in range(len(nodes) - 1)]


@dataclass
class SupportForest:
    """Bipartite graph over advertisers and queries whose edges are the strictly fractional pairs."""
    graph: nx.Graph

    @classmethod
    def from_values(cls, values: Mapping[Edge, Fraction]) -> "SupportForest":
        graph = nx.Graph()
        for (i, j), v in sorted(values.items()):
            if 0 < v < 1:
                graph.add_edge(("a", i), ("q", j))
        return cls(graph=graph)

    @property
    def edges(self) -> List[Edge]:
        return sorted(_edge(u, v) for u, v in self.graph.edges())

    def degree(self, node: Node) -> int:
        return self.graph.degree(node) if node in self.graph else 0

    def is_forest(self) -> bool:
        return self.graph.number_of_nodes() == 0 or nx.is_forest(self.graph)

    def trees(self) -> List[List[Node]]:
        return sorted(sorted(c) for c in nx.connected_components(self.graph))

    def tree_index(self) -> Dict[Node, int]:
        return {node: t for t, tree in enumerate(self.trees()) for node in tree}

    def leaves(self, tree: Sequence[Node]) -> List[Node]:
        return [v for v in tree if self.graph.degree(v) == 1]

    def path(self, source: Node, target: Node) -> List[Node]:
        return nx.shortest_path(self.graph, source, target)

    def tree_edges(self, tree: Sequence[Node]) -> List[Edge]:
        return sorted(_edge(u, v) for u, v in self.graph.subgraph(tree).edges())

    def cycles(self) -> List[List[Node]]:
        return nx.cycle_basis(self.graph)


def support_forest(inst: Instance, y: FractionalAssignment) -> SupportForest:
    return SupportForest.from_values(y.y)


@dataclass(frozen=True)
class Constraint:
    """A row over subsystem-local columns; frozen variables are folded into rhs."""
    label: str
    coefficients: Mapping[int, Fraction]
    rhs: Fraction

    def activity(self, values: Sequence[Fraction]) -> Fraction:
        return sum((a * values[c] for c, a in self.coefficients.items()), ZERO)

    def rate(self, direction: Sequence[Fraction]) -> Fraction:
        return self.activity(direction)


@dataclass(frozen=True)
class Subsystem:
    columns: Tuple[Edge, ...]
    equalities: Tuple[Constraint, ...] = ()
    guards: Tuple[Constraint, ...] = ()

    @property
    def width(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class RandMovePlan:
    direction: Tuple[Fraction, ...]
    alpha: Fraction
    beta: Fraction


def _to_sympy(v: Fraction) -> sympy.Rational:
    return sympy.Rational(v.numerator, v.denominator)


def null_vector(sub: Subsystem) -> Optional[Tuple[Fraction, ...]]:
    """
    A nonzero r with every equality row . r = 0. The first free column of
    the reduced row echelon form gets 1 and the result is scaled so its
    first nonzero entry is positive. None when the rows have full column
    rank.
    """
    width = sub.width
    if width == 0:
        return None
    if not sub.equalities:
        return (ONE,) + (ZERO,) * (width - 1)
    matrix = sympy.Matrix([
        [_to_sympy(row.coefficients.get(c, ZERO)) for c in range(width)]
        for row in sub.equalities
    ])
    basis = matrix.nullspace()
    if not basis:
        return None
    vec = [Fraction(int(v.p), int(v.q)) for v in basis[0]]
    lead = next(v for v in vec if v != 0)
    if lead < 0:
        vec = [-v for v in vec]
    return tuple(vec)


def max_step(current: Sequence[Fraction], direction: Sequence[Fraction], guards: Sequence[Constraint] = ()) -> Fraction:
    """Largest t >= 0 keeping current + t*direction inside [0,1] and under every guard."""
    limits: List[Fraction] = []
    for x, d in zip(current, direction):
        if d > 0:
            limits.append((ONE - x) / d)
        elif d < 0:
            limits.append(x / -d)
    for g in guards:
        rate = g.rate(direction)
        if rate > 0:
            limits.append(max(g.rhs - g.activity(current), ZERO) / rate)
    if not limits:
        raise CaseEngineError("Step direction is zero")
    return min(limits)


def plan_rand_move(sub: Subsystem, current: Sequence[Fraction]) -> Optional[RandMovePlan]:
    """Null direction with maximal step lengths both ways; None if either is zero or no direction exists."""
    r = null_vector(sub)
    if r is None:
        return None
    alpha = max_step(current, r, sub.guards)
    beta = max_step(current, [-v for v in r], sub.guards)
    if alpha == 0 or beta == 0:
        return None
    return RandMovePlan(direction=r, alpha=alpha, beta=beta)


def _shift(current: Sequence[Fraction], direction: Sequence[Fraction], t: Fraction) -> Tuple[Fraction, ...]:
    return tuple(x + t * d for x, d in zip(current, direction))


def _draw_branch(plan: RandMovePlan, rng: np.random.Generator) -> bool:
    """True for the +alpha branch, taken with probability beta / (alpha + beta)."""
    return rng.random() < plan.beta / (plan.alpha + plan.beta)


def rand_move(sub: Subsystem, current: Sequence[Fraction], rng: np.random.Generator) -> Tuple[Fraction, ...]:
    """
    One Rand-Move: x + alpha*r with probability beta/(alpha+beta), otherwise
    x - beta*r. Both branches keep every equality row; the mean is x.
    """
    plan = plan_rand_move(sub, current)
    if plan is None:
        raise CaseEngineError(
            f"Subsystem over {sub.width} columns with {len(sub.equalities)} rows admits no rounding move"
        )
    if _draw_branch(plan, rng):
        return _shift(current, plan.direction, plan.alpha)
    return _shift(current, plan.direction, -plan.beta)


@dataclass(frozen=True)
class RoundingStep:
    case: str
    columns: Tuple[Edge, ...]
    alpha: Optional[Fraction]
    beta: Optional[Fraction]
    branch: str
    fixed: Tuple[Edge, ...] = ()
    tightened: Tuple[str, ...] = ()
    updates: Mapping[Edge, Fraction] = field(default_factory=dict)
    payments: Tuple[Fraction, ...] = ()

    def to_record(self, index: int) -> RoundingStepRecord:
        def text(v: Optional[Fraction]) -> Optional[str]:
            return None if v is None else str(v)

        return RoundingStepRecord(
            step=index,
            case=self.case,
            columns=list(self.columns),
            alpha=text(self.alpha),
            beta=text(self.beta),
            branch=self.branch,
            fixed=list(self.fixed),
            tightened=list(self.tightened),
            updates=[AssignmentValue(advertiser=i, query=j, value=str(v)) for (i, j), v in self.updates.items()],
            payments=[str(p) for p in self.payments],
        )


@dataclass
class RoundingTrace:
    steps: List[RoundingStep] = field(default_factory=list)

    def append(self, step: RoundingStep) -> None:
        self.steps.append(step)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[RoundingStep]:
        return iter(self.steps)

    def case_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = defaultdict(int)
        for step in self.steps:
            counts[step.case] += 1
        return dict(counts)

    def to_jsonl(self) -> str:
        return "".join(step.to_record(k).model_dump_json() + "\n" for k, step in enumerate(self.steps))


# ---------------------------------------------------------------------------
# Cycle breaking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleMove:
    direction: Mapping[Edge, Fraction]
    reversed: bool


def _joint(a: Edge, b: Edge) -> str:
    return "a" if a[0] == b[0] else "q"


def _walk_direction(inst: Instance, walk: Sequence[Edge], joints: Sequence[str]) -> CycleMove:
    """
    Closed-walk direction: z starts at -1 on walk[0]; a query joint negates,
    an advertiser joint keeps that advertiser's payment. The pivot
    advertiser owning walk[0] and walk[-1] is then balanced by clipping the
    last entry, or the first one after reversing the walk.
    """
    z = [-ONE]
    for t, kind in enumerate(joints):
        if kind == "q":
            z.append(-z[-1])
        else:
            z.append(-inst.bid(*walk[t]) * z[-1] / inst.bid(*walk[t + 1]))
    u_first = inst.bid(*walk[0])
    u_last = inst.bid(*walk[-1])
    z_last = z[-1]
    if z_last <= 0:
        raise CaseEngineError(f"Closed walk {list(walk)} has no alternating direction")
    if u_first <= u_last * z_last:
        z[-1] = u_first / u_last
        reverse = False
    else:
        z = [-v / z_last for v in z]
        z[0] = u_last / u_first
        reverse = True
    return CycleMove(direction=dict(zip(walk, z)), reversed=reverse)


def _orient_cycle(cycle: Sequence[Node]) -> List[Edge]:
    start = min(n for n in cycle if n[0] == "a")
    k = list(cycle).index(start)
    ring = list(cycle[k:]) + list(cycle[:k])
    if ring[-1] < ring[1]:
        ring = [ring[0]] + ring[1:][::-1]
    return [_edge(ring[t], ring[(t + 1) % len(ring)]) for t in range(len(ring))]


def cycle_breaking_direction(inst: Instance, cycle: Sequence[Node]) -> CycleMove:
    """
    Direction for one support cycle, given as its node sequence.

    The walk starts at the cycle's lowest advertiser i1 and its smaller
    neighbouring query j1; every payment except i1's is kept by
    construction and i1's by the clip, so the objective never changes.
    """
    walk = _orient_cycle(cycle)
    joints = [_joint(walk[t], walk[t + 1]) for t in range(len(walk) - 1)]
    return _walk_direction(inst, walk, joints)


def forestify(
    inst: Instance, y: FractionalAssignment, trace: Optional[RoundingTrace] = None
) -> FractionalAssignment:
    """Break every cycle of the strictly fractional support; payments and objective are unchanged."""
    values: Dict[Edge, Fraction] = {e: v for e, v in y.y.items() if v != 0}
    broken = 0
    while True:
        forest = SupportForest.from_values(values)
        cycles = forest.cycles()
        if not cycles:
            break
        cycle = min(cycles, key=lambda c: (len(c), sorted(c)))
        move = cycle_breaking_direction(inst, cycle)
        walk = list(move.direction)
        current = [values[e] for e in walk]
        direction = [move.direction[e] for e in walk]
        step = max_step(current, direction)
        updated = _shift(current, direction, step)
        for e, v in zip(walk, updated):
            values[e] = v
        broken += 1
        if trace is not None:
            trace.append(RoundingStep(
                case="cycle-break",
                columns=tuple(walk),
                alpha=None,
                beta=step,
                branch="reverse" if move.reversed else "forward",
                fixed=tuple(e for e, v in zip(walk, updated) if v in (ZERO, ONE)),
                updates=dict(zip(walk, updated)),
                payments=tuple(advertiser_payments(inst, values)),
            ))
    if broken:
        logger.debug(f"forestify broke {broken} cycles")
    return FractionalAssignment(y={e: v for e, v in sorted(values.items()) if v != 0})


# ---------------------------------------------------------------------------
# Case engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Plan:
    case: str
    subsystem: Subsystem
    direction: Tuple[Fraction, ...]
    alpha: Optional[Fraction]
    beta: Fraction
    deterministic: bool = False
    reversed: bool = False


class _RoundingState:
    """Current values of every LP column plus row bookkeeping for one realized scenario."""

    def __init__(self, inst: Instance, scenario: Scenario, y: FractionalAssignment):
        self.inst = inst
        self.scenario = scenario
        self.values: Dict[Edge, Fraction] = {}
        self.by_query: Dict[int, List[Edge]] = defaultdict(list)
        self.by_customer: Dict[int, List[Edge]] = defaultdict(list)
        self.by_advertiser: Dict[int, List[Edge]] = defaultdict(list)
        self.customer_queries: Dict[int, List[int]] = defaultdict(list)
        for j, q in enumerate(inst.queries):
            self.customer_queries[q.customer].append(j)
        for e in inst.edges():
            i, j = e
            self.values[e] = y.value(i, j)
            self.by_query[j].append(e)
            self.by_customer[inst.queries[j].customer].append(e)
            self.by_advertiser[i].append(e)

    # rows

    def customer_of(self, j: int) -> int:
        return self.inst.queries[j].customer

    def query_sum(self, j: int) -> Fraction:
        return sum((self.values[e] for e in self.by_query[j]), ZERO)

    def customer_sum(self, k: int) -> Fraction:
        return sum((self.values[e] for e in self.by_customer[k]), ZERO)

    def payment(self, i: int) -> Fraction:
        return sum((self.values[e] * self.inst.bid(*e) for e in self.by_advertiser[i]), ZERO)

    def query_tight(self, j: int) -> bool:
        return self.query_sum(j) == self.scenario.indicator(j)

    def customer_tight(self, k: int) -> bool:
        return self.customer_sum(k) == self.inst.customers[k].capacity

    def budget_tight(self, i: int) -> bool:
        return self.payment(i) == self.inst.budget(i)

    def is_active(self, j: int) -> bool:
        """Query with a strictly fractional pair whose (F) row has slack."""
        return any(0 < self.values[e] < 1 for e in self.by_query[j]) and not self.query_tight(j)

    def fractional(self) -> List[Edge]:
        return sorted(e for e, v in self.values.items() if 0 < v < 1)

    def payments(self) -> Tuple[Fraction, ...]:
        return tuple(self.payment(i) for i in range(self.inst.m))

    # subsystems

    def subsystem(
        self,
        columns: Sequence[Edge],
        preserve_queries: Set[int] = frozenset(),
        preserve_advertisers: Set[int] = frozenset(),
        budgets: str = "none",
        all_guards: bool = False,
    ) -> Subsystem:
        """
        Rows touching the given columns.

        (F) and (C) rows become equalities when tight and guards otherwise
        (always guards with all_guards). preserve_* add rows fixing a query's
        local sum or an advertiser's local payment. budgets selects the (B)
        treatment of the remaining advertisers: "none", "tight" (tight rows
        as equalities, others as guards) or "guard" (only non-tight rows, as
        guards).
        """
        index = {e: c for c, e in enumerate(columns)}
        current = [self.values[e] for e in columns]
        equalities: List[Constraint] = []
        guards: List[Constraint] = []

        def local_row(label: str, edges: Sequence[Edge], weight, rhs: Fraction) -> Constraint:
            coeffs = {index[e]: weight(e) for e in edges if e in index}
            outside = sum((weight(e) * self.values[e] for e in edges if e not in index), ZERO)
            return Constraint(label, coeffs, rhs - outside)

        def unit(_: Edge) -> Fraction:
            return ONE

        def bid(e: Edge) -> Fraction:
            return self.inst.bid(*e)

        for j in sorted({e[1] for e in columns}):
            row = local_row(f"F{j}", self.by_query[j], unit, self.scenario.indicator(j))
            if self.query_tight(j) and not all_guards:
                equalities.append(row)
            else:
                guards.append(row)
            if j in preserve_queries:
                equalities.append(Constraint(f"Q{j}", row.coefficients, row.activity(current)))

        for k in sorted({self.customer_of(e[1]) for e in columns}):
            row = local_row(f"C{k}", self.by_customer[k], unit, Fraction(self.inst.customers[k].capacity))
            if self.customer_tight(k) and not all_guards:
                equalities.append(row)
            else:
                guards.append(row)

        for i in sorted({e[0] for e in columns}):
            row = local_row(f"B{i}", self.by_advertiser[i], bid, self.inst.budget(i))
            if i in preserve_advertisers:
                equalities.append(Constraint(f"P{i}", row.coefficients, row.activity(current)))
            elif budgets == "tight":
                (equalities if self.budget_tight(i) else guards).append(row)
            elif budgets == "guard" and not self.budget_tight(i):
                guards.append(row)

        return Subsystem(columns=tuple(columns), equalities=tuple(equalities), guards=tuple(guards))

    def random_plan(self, case: str, sub: Subsystem) -> Optional[_Plan]:
        if not sub.columns:
            return None
        current = [self.values[e] for e in sub.columns]
        plan = plan_rand_move(sub, current)
        if plan is None:
            return None
        return _Plan(case=case, subsystem=sub, direction=plan.direction, alpha=plan.alpha, beta=plan.beta)

    def path_plan(self, case: str, forest: SupportForest, source: Node, target: Node) -> Optional[_Plan]:
        """Rand-Move on a tree path; interior queries and advertisers are preserved, endpoints are free."""
        nodes = forest.path(source, target)
        inner = nodes[1:-1]
        sub = self.subsystem(
            _path_edges(nodes),
            preserve_queries={n[1] for n in inner if n[0] == "q"},
            preserve_advertisers={n[1] for n in inner if n[0] == "a"},
        )
        return self.random_plan(case, sub)

    def closure_plan(self, case: str, forest: SupportForest, first: Node, second: Node) -> Optional[_Plan]:
        """
        Deterministic step on the path between two active queries of one
        tight customer, closed through that customer's capacity row.
        """
        path = _path_edges(forest.path(first, second))
        walk = [path[0]] + path[:0:-1]
        joints = ["q"] + [_joint(walk[t], walk[t + 1]) for t in range(1, len(walk) - 1)]
        move = _walk_direction(self.inst, walk, joints)
        sub = self.subsystem(walk, all_guards=True)
        current = [self.values[e] for e in walk]
        direction = tuple(move.direction[e] for e in walk)
        step = max_step(current, direction, sub.guards)
        if step == 0:
            return None
        return _Plan(
            case=case,
            subsystem=sub,
            direction=direction,
            alpha=None,
            beta=step,
            deterministic=True,
            reversed=move.reversed,
        )

    def pick_leaf(self, forest: SupportForest, tree: Sequence[Node], exclude: Node) -> Optional[Node]:
        """Leaf advertiser first, then a query of a customer with spare capacity, then lowest index."""

        def rank(node: Node) -> Tuple[int, Node]:
            if node[0] == "a":
                return (0, node)
            if not self.customer_tight(self.customer_of(node[1])):
                return (1, node)
            return (2, node)

        leaves = [v for v in forest.leaves(tree) if v != exclude]
        return min(leaves, key=rank, default=None)

    def follow_chain(self, forest: SupportForest, start: Node) -> Optional[Tuple[List[Edge], Set[int], Set[int]]]:
        """
        Chain tree paths through tight customers: from the entry node walk to
        a leaf; a leaf query of a tight customer hands over to an active
        query of the same customer in a tree not yet visited. Stops at a leaf
        advertiser or at a query whose customer has spare capacity.
        """
        trees = forest.trees()
        tree_of = forest.tree_index()
        visited = {tree_of[start]}
        entry = start
        edges: List[Edge] = []
        keep_queries: Set[int] = set()
        keep_advertisers: Set[int] = set()
        while True:
            leaf = self.pick_leaf(forest, trees[tree_of[entry]], exclude=entry)
            if leaf is None:
                return None
            nodes = forest.path(entry, leaf)
            edges.extend(_path_edges(nodes))
            for n in nodes[1:-1]:
                (keep_queries if n[0] == "q" else keep_advertisers).add(n[1])
            if leaf[0] == "a":
                return edges, keep_queries, keep_advertisers
            k = self.customer_of(leaf[1])
            if not self.customer_tight(k):
                return edges, keep_queries, keep_advertisers
            options = [
                ("q", j) for j in self.customer_queries[k]
                if ("q", j) in tree_of and tree_of[("q", j)] not in visited and self.is_active(j)
            ]
            if not options:
                return None
            entry = min(options)
            visited.add(tree_of[entry])

    def chain_plan(self, case: str, forest: SupportForest, start: Node) -> Optional[_Plan]:
        chain = self.follow_chain(forest, start)
        if chain is None:
            return None
        edges, keep_queries, keep_advertisers = chain
        sub = self.subsystem(edges, keep_queries, keep_advertisers)
        return self.random_plan(case, sub)

    # cases, in dispatch order

    def two_leaf_advertisers(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            advertisers = [v for v in forest.leaves(tree) if v[0] == "a"]
            for t, a in enumerate(advertisers):
                for b in advertisers[t + 1:]:
                    plan = self.path_plan("i", forest, a, b)
                    if plan:
                        return plan
        return None

    def _slack_leaf_queries(self, forest: SupportForest, tree: Sequence[Node]) -> List[Node]:
        return [
            v for v in forest.leaves(tree)
            if v[0] == "q" and not self.customer_tight(self.customer_of(v[1]))
        ]

    def leaf_queries_one_customer(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            queries = self._slack_leaf_queries(forest, tree)
            for t, a in enumerate(queries):
                for b in queries[t + 1:]:
                    if self.customer_of(a[1]) == self.customer_of(b[1]):
                        plan = self.path_plan("ii.1", forest, a, b)
                        if plan:
                            return plan
        return None

    def leaf_queries_two_customers(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            queries = self._slack_leaf_queries(forest, tree)
            for t, a in enumerate(queries):
                for b in queries[t + 1:]:
                    if self.customer_of(a[1]) != self.customer_of(b[1]):
                        plan = self.path_plan("ii.2", forest, a, b)
                        if plan:
                            return plan
        return None

    def tight_customer_pair(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            active: Dict[int, List[Node]] = defaultdict(list)
            for v in tree:
                if v[0] == "q" and self.is_active(v[1]):
                    k = self.customer_of(v[1])
                    if self.customer_tight(k):
                        active[k].append(v)
            for k in sorted(active):
                queries = active[k]
                for t, a in enumerate(queries):
                    for b in queries[t + 1:]:
                        plan = self.closure_plan("ii.3", forest, a, b)
                        if plan:
                            return plan
        return None

    def advertiser_and_query(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            advertisers = [v for v in forest.leaves(tree) if v[0] == "a"]
            queries = self._slack_leaf_queries(forest, tree)
            for a in advertisers:
                for q in queries:
                    plan = self.path_plan("ii.4", forest, a, q)
                    if plan:
                        return plan
        return None

    def whole_system(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            plan = self.random_plan("system", self.subsystem(forest.tree_edges(tree), budgets="tight"))
            if plan:
                return plan
        return self.random_plan("system", self.subsystem(forest.edges, budgets="tight"))

    def chain_from_advertiser(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            for a in (v for v in forest.leaves(tree) if v[0] == "a"):
                plan = self.chain_plan("ii.5", forest, a)
                if plan:
                    return plan
        return None

    def chain_from_query(self, forest: SupportForest) -> Optional[_Plan]:
        for tree in forest.trees():
            queries = sorted(
                (v for v in forest.leaves(tree) if v[0] == "q"),
                key=lambda v: (self.customer_tight(self.customer_of(v[1])), v),
            )
            for q in queries:
                plan = self.chain_plan("iii", forest, q)
                if plan:
                    return plan
        # Assignment and capacity rows alone always leave a fractional point underdetermined
        return self.random_plan("iii", self.subsystem(forest.edges, budgets="guard"))

    def next_plan(self) -> Optional[_Plan]:
        forest = SupportForest.from_values(self.values)
        for finder in (
            self.two_leaf_advertisers,
            self.leaf_queries_one_customer,
            self.leaf_queries_two_customers,
            self.tight_customer_pair,
            self.advertiser_and_query,
            self.whole_system,
            self.chain_from_advertiser,
            self.chain_from_query,
        ):
            plan = finder(forest)
            if plan is not None:
                return plan
        return None

    def execute(self, plan: _Plan, rng: np.random.Generator) -> RoundingStep:
        sub = plan.subsystem
        current = [self.values[e] for e in sub.columns]
        if plan.deterministic:
            updated = _shift(current, plan.direction, plan.beta)
            branch = "det-reverse" if plan.reversed else "det"
        elif _draw_branch(RandMovePlan(plan.direction, plan.alpha, plan.beta), rng):
            updated = _shift(current, plan.direction, plan.alpha)
            branch = "+"
        else:
            updated = _shift(current, plan.direction, -plan.beta)
            branch = "-"

        tightened = tuple(
            g.label for g in sub.guards
            if g.activity(current) != g.rhs and g.activity(updated) == g.rhs
        )
        for e, v in zip(sub.columns, updated):
            self.values[e] = v
        fixed = tuple(e for e, old, new in zip(sub.columns, current, updated) if new in (ZERO, ONE) and old != new)
        return RoundingStep(
            case=plan.case,
            columns=sub.columns,
            alpha=plan.alpha,
            beta=plan.beta,
            branch=branch,
            fixed=fixed,
            tightened=tightened,
            updates=dict(zip(sub.columns, updated)),
            payments=self.payments(),
        )

    def check_rows(self, columns: Sequence[Edge]) -> Optional[str]:
        """First broken (F), (C) or box constraint among rows touching columns."""
        for e in columns:
            if not 0 <= self.values[e] <= 1:
                return f"x[{e[0]},{e[1]}] = {self.values[e]} outside [0, 1]"
        for j in sorted({e[1] for e in columns}):
            if self.query_sum(j) > self.scenario.indicator(j):
                return f"assignment (F) row of query {j} exceeds {self.scenario.indicator(j)}"
        for k in sorted({self.customer_of(e[1]) for e in columns}):
            if self.customer_sum(k) > self.inst.customers[k].capacity:
                return f"capacity (C) row of customer {k} exceeds {self.inst.customers[k].capacity}"
        return None


def round_offline(
    inst: Instance,
    scenario: Scenario,
    y_star: FractionalAssignment,
    rng: np.random.Generator,
) -> Tuple[IntegralAssignment, RoundingTrace]:
    """
    Round an optimal realized LP_BC solution to an integral assignment.

    Case order: two leaf advertisers (i); two slack leaf queries of one
    customer (ii.1) or of two customers (ii.2); two active queries of a
    tight customer in one tree (ii.3, deterministic); a leaf advertiser with
    a slack leaf query (ii.4); the whole tight system of a tree or of the
    forest; chains through tight customers from a leaf advertiser (ii.5) or
    from a leaf query (iii). Raises CaseEngineError with the trace when no
    case applies.
    """
    validate_scenario(inst, scenario)
    trace = RoundingTrace()
    y = forestify(inst, y_star, trace=trace)
    state = _RoundingState(inst, scenario, y)

    limit = config.settings.rounding_max_steps
    while state.fractional():
        if len(trace) >= limit:
            raise CaseEngineError(f"Rounding exceeded {limit} steps", trace=trace)
        plan = state.next_plan()
        if plan is None:
            raise CaseEngineError(
                f"No rounding case applies to fractional pairs {state.fractional()}", trace=trace
            )
        step = state.execute(plan, rng)
        trace.append(step)
        logger.debug(
            f"rounding step {len(trace)}: case {step.case}, branch {step.branch}, "
            f"fixed {list(step.fixed)}, tightened {list(step.tightened)}"
        )
        if not step.fixed and not step.tightened:
            raise CaseEngineError(f"Rounding step in case {step.case} made no progress", trace=trace)
        broken = state.check_rows(step.columns)
        if broken:
            raise CaseEngineError(f"Rounding step in case {step.case} broke {broken}", trace=trace)

    assignment = assignment_from_values(state.values)
    return assignment, trace


def approx_ratio_bound(inst: Instance) -> Fraction:
    """(4 - max_i max_j u_ij / b_i) / 4; requires every bid <= its budget."""
    ratio = max_bid_budget_ratio(inst)
    if ratio > 1:
        raise PreconditionError(
            f"A bid exceeds its advertiser's budget (max bid/budget {ratio}); apply truncate_bids first"
        )
    return (4 - ratio) / 4


@dataclass(frozen=True)
class OfflineResult:
    assignment: IntegralAssignment
    revenue: Fraction
    lp_objective: Fraction
    bound: Fraction
    trace: RoundingTrace

    @property
    def ratio(self) -> Optional[Fraction]:
        if self.lp_objective == 0:
            return None
        return self.revenue / self.lp_objective


def realized_lp(inst: Instance, scenario: Scenario) -> Tuple[FractionalAssignment, Fraction]:
    """Optimal realized LP_BC solution and its objective."""
    lp = build_lp(inst, Variant.BC, scenario)
    sol = solve_lp(lp)
    return to_fractional_assignment(lp, sol), sol.objective_value


def solve_offline(
    inst: Instance,
    scenario: Scenario,
    rng: np.random.Generator,
    y_star: Optional[FractionalAssignment] = None,
    lp_objective: Optional[Fraction] = None,
) -> OfflineResult:
    """Realized LP_BC, rounding and scoring in one call; bids above budget are truncated first."""
    if max_bid_budget_ratio(inst) > 1:
        logger.info("Truncating bids above budget before offline rounding")
        inst = truncate_bids(inst)
    if y_star is None or lp_objective is None:
        y_star, lp_objective = realized_lp(inst, scenario)
    assignment, trace = round_offline(inst, scenario, y_star, rng)
    revenue = integral_revenue(inst, assignment, scenario)
    return OfflineResult(
        assignment=assignment,
        revenue=revenue,
        lp_objective=lp_objective,
        bound=approx_ratio_bound(inst),
        trace=trace,
    )
