"""
LP Relaxations and Exact Simplex

Builds the LP_B / LP_C / LP_BC relaxations of the allocation program and
solves them with a dense two-phase simplex over Fractions:
- one column per (advertiser, query) pair with a positive bid
- rows tagged (F) per query, (C) per customer, (B) per advertiser and (U)
  for the x <= 1 bound; lower bounds 0 are native
- expectation mode uses p_j as the (F) right-hand side, realized mode the
  0/1 arrival of a Scenario

Bland's rule on both entering and leaving variables guarantees termination.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from adcell.errors import SolverError
from adcell.services.model import (
    ZERO,
    ONE,
    Edge,
    FractionalAssignment,
    Instance,
    Scenario,
    ensure_valid,
    validate_scenario,
)

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    B = "b"
    C = "c"
    BC = "bc"

    @property
    def has_budget_rows(self) -> bool:
        return self in (Variant.B, Variant.BC)

    @property
    def has_capacity_rows(self) -> bool:
        return self in (Variant.C, Variant.BC)


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class RowTag:
    kind: str  # "F", "C", "B" or "U"
    index: int

    def __str__(self) -> str:
        return f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Row:
    coefficients: Mapping[int, Fraction]
    relation: Relation
    rhs: Fraction
    tag: RowTag

    def activity(self, values: Sequence[Fraction]) -> Fraction:
        return sum((a * values[c] for c, a in self.coefficients.items()), ZERO)

    def holds(self, values: Sequence[Fraction]) -> bool:
        lhs = self.activity(values)
        if self.relation is Relation.LE:
            return lhs <= self.rhs
        if self.relation is Relation.GE:
            return lhs >= self.rhs
        return lhs == self.rhs

    def is_tight(self, values: Sequence[Fraction]) -> bool:
        return self.activity(values) == self.rhs


@dataclass(frozen=True)
class LinearProgram:
    """maximize objective . x subject to rows, 0 <= x."""
    objective: Tuple[Fraction, ...]
    rows: Tuple[Row, ...]
    columns: Tuple[Edge, ...]
    variant: Variant = Variant.BC
    expectation: bool = True
    column_index: Mapping[Edge, int] = field(default_factory=dict, compare=False)

    @property
    def num_columns(self) -> int:
        return len(self.columns)

    def rows_of_kind(self, kind: str) -> List[Row]:
        return [r for r in self.rows if r.tag.kind == kind]


@dataclass(frozen=True)
class LpSolution:
    values: Tuple[Fraction, ...]
    objective_value: Fraction
    status: LpStatus
    columns: Tuple[Edge, ...] = ()
    iterations: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def value(self, advertiser: int, query: int) -> Fraction:
        for c, edge in enumerate(self.columns):
            if edge == (advertiser, query):
                return self.values[c]
        return ZERO


def build_lp(inst: Instance, variant: Variant, scenario: Optional[Scenario] = None) -> LinearProgram:
    """
    Transcribe the relaxation.

    scenario=None selects expectation mode. Rows without any column are
    omitted since they constrain nothing.
    """
    ensure_valid(inst)
    if scenario is not None:
        validate_scenario(inst, scenario)

    columns = tuple(inst.edges())
    index = {edge: c for c, edge in enumerate(columns)}
    objective = tuple(inst.bid(i, j) for i, j in columns)

    by_query: Dict[int, List[int]] = {}
    by_customer: Dict[int, List[int]] = {}
    by_advertiser: Dict[int, List[int]] = {}
    for c, (i, j) in enumerate(columns):
        by_query.setdefault(j, []).append(c)
        by_customer.setdefault(inst.queries[j].customer, []).append(c)
        by_advertiser.setdefault(i, []).append(c)

    rows: List[Row] = []
    for j in sorted(by_query):
        rhs = inst.queries[j].prob if scenario is None else scenario.indicator(j)
        rows.append(Row({c: ONE for c in by_query[j]}, Relation.LE, rhs, RowTag("F", j)))

    if variant.has_capacity_rows:
        for k in sorted(by_customer):
            cap = Fraction(inst.customers[k].capacity)
            rows.append(Row({c: ONE for c in by_customer[k]}, Relation.LE, cap, RowTag("C", k)))

    if variant.has_budget_rows:
        for i in sorted(by_advertiser):
            coeffs = {c: objective[c] for c in by_advertiser[i]}
            rows.append(Row(coeffs, Relation.LE, inst.budget(i), RowTag("B", i)))

    for c in range(len(columns)):
        rows.append(Row({c: ONE}, Relation.LE, ONE, RowTag("U", c)))

    return LinearProgram(
        objective=objective,
        rows=tuple(rows),
        columns=columns,
        variant=variant,
        expectation=scenario is None,
        column_index=index,
    )


class SimplexTableau:
    """
    Dense tableau in canonical form: basis[i] is the column basic in row i,
    A[i][-1] its value. reduced[j] holds c_j - c_B B^-1 A_j and
    reduced[-1] the negated objective value.
    """

    def __init__(self, A: List[List[Fraction]], basis: List[int]):
        self.A = A
        self.basis = basis
        self.m = len(A)
        self.n = len(A[0]) - 1 if A else 0
        self.reduced: List[Fraction] = [ZERO] * (self.n + 1)
        self.excluded: set = set()
        self.iterations = 0

    def set_costs(self, costs: Sequence[Fraction]) -> None:
        reduced = list(costs) + [ZERO]
        for i, b in enumerate(self.basis):
            cb = costs[b]
            if cb:
                row = self.A[i]
                for j in range(self.n + 1):
                    if row[j]:
                        reduced[j] -= cb * row[j]
        self.reduced = reduced

    @property
    def objective(self) -> Fraction:
        return -self.reduced[-1]

    def pivot(self, i: int, j: int) -> None:
        row = self.A[i]
        piv = row[j]
        if piv != 1:
            self.A[i] = row = [v / piv for v in row]
        nz = [(l, v) for l, v in enumerate(row) if v]
        for k in range(self.m):
            if k == i:
                continue
            f = self.A[k][j]
            if f:
                target = self.A[k]
                for l, v in nz:
                    target[l] -= f * v
        f = self.reduced[j]
        if f:
            for l, v in nz:
                self.reduced[l] -= f * v
        self.basis[i] = j
        self.iterations += 1

    def bland_step(self) -> Optional[LpStatus]:
        """One primal pivot; None while pivoting continues."""
        entering = next(
            (j for j in range(self.n) if j not in self.excluded and self.reduced[j] > 0),
            None,
        )
        if entering is None:
            return LpStatus.OPTIMAL
        best = None
        for i in range(self.m):
            a = self.A[i][entering]
            if a > 0:
                key = (self.A[i][-1] / a, self.basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
        if best is None:
            return LpStatus.UNBOUNDED
        self.pivot(best[1], entering)
        return None

    def run(self) -> LpStatus:
        while True:
            status = self.bland_step()
            if status is not None:
                return status

    def column_values(self, count: int) -> List[Fraction]:
        values = [ZERO] * count
        for i, b in enumerate(self.basis):
            if b < count:
                values[b] = self.A[i][-1]
        return values


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Two-phase exact simplex; an unbounded program raises SolverError."""
    n = lp.num_columns
    if not lp.rows:
        return LpSolution(values=(), objective_value=ZERO, status=LpStatus.OPTIMAL, columns=lp.columns)

    # Normalize to nonnegative right-hand sides
    normalized: List[Tuple[Dict[int, Fraction], Relation, Fraction]] = []
    for row in lp.rows:
        coeffs, rel, rhs = dict(row.coefficients), row.relation, row.rhs
        if rhs < 0:
            coeffs = {c: -a for c, a in coeffs.items()}
            rhs = -rhs
            rel = {Relation.LE: Relation.GE, Relation.GE: Relation.LE}.get(rel, rel)
        normalized.append((coeffs, rel, rhs))

    num_slack = sum(1 for _, rel, _ in normalized if rel is not Relation.EQ)
    num_art = sum(1 for _, rel, _ in normalized if rel is not Relation.LE)
    width = n + num_slack + num_art
    first_art = n + num_slack

    A: List[List[Fraction]] = []
    basis: List[int] = []
    slack = n
    art = first_art
    for coeffs, rel, rhs in normalized:
        line = [ZERO] * (width + 1)
        for c, a in coeffs.items():
            line[c] = a
        line[-1] = rhs
        if rel is Relation.LE:
            line[slack] = ONE
            basis.append(slack)
            slack += 1
        else:
            if rel is Relation.GE:
                line[slack] = -ONE
                slack += 1
            line[art] = ONE
            basis.append(art)
            art += 1
        A.append(line)

    tableau = SimplexTableau(A, basis)

    if num_art:
        tableau.set_costs([ZERO] * first_art + [-ONE] * num_art)
        tableau.run()
        if tableau.objective < 0:
            logger.info(f"LP infeasible after phase 1 ({tableau.iterations} pivots)")
            return LpSolution(
                values=tuple([ZERO] * n),
                objective_value=ZERO,
                status=LpStatus.INFEASIBLE,
                columns=lp.columns,
                iterations=tableau.iterations,
            )
        _drive_out_artificials(tableau, first_art)
        tableau.excluded = set(range(first_art, width))

    tableau.set_costs(list(lp.objective) + [ZERO] * (width - n))
    status = tableau.run()
    if status is LpStatus.UNBOUNDED:
        raise SolverError(f"Simplex reports an unbounded program with {n} box-bounded columns")

    values = tableau.column_values(n)
    objective_value = sum((c * v for c, v in zip(lp.objective, values)), ZERO)
    logger.debug(f"LP solved: {n} columns, {len(lp.rows)} rows, {tableau.iterations} pivots, objective {objective_value}")
    return LpSolution(
        values=tuple(values),
        objective_value=objective_value,
        status=LpStatus.OPTIMAL,
        columns=lp.columns,
        iterations=tableau.iterations,
    )


def _drive_out_artificials(tableau: SimplexTableau, first_art: int) -> None:
    """Pivot zero-valued artificials out of the basis; drop redundant rows."""
    i = 0
    while i < tableau.m:
        if tableau.basis[i] >= first_art:
            row = tableau.A[i]
            j = next((j for j in range(first_art) if row[j] != 0), None)
            if j is None:
                del tableau.A[i]
                del tableau.basis[i]
                tableau.m -= 1
                continue
            tableau.pivot(i, j)
        i += 1


def lp_round_trip(inst: Instance, variant: Variant, scenario: Optional[Scenario] = None) -> LpSolution:
    return solve_lp(build_lp(inst, variant, scenario))


def check_solution(lp: LinearProgram, values: Sequence[Fraction]) -> List[Row]:
    """Rows violated by values (exact); negative entries are reported as U rows."""
    if len(values) != lp.num_columns:
        raise SolverError(f"Solution has {len(values)} values for {lp.num_columns} columns")
    violated = [row for row in lp.rows if not row.holds(values)]
    for c, v in enumerate(values):
        if v < 0:
            violated.append(Row({c: ONE}, Relation.GE, ZERO, RowTag("U", c)))
    return violated


def to_fractional_assignment(lp: LinearProgram, sol: LpSolution) -> FractionalAssignment:
    return FractionalAssignment(y={edge: v for edge, v in zip(lp.columns, sol.values) if v != 0})


def values_from_assignment(lp: LinearProgram, y: FractionalAssignment) -> List[Fraction]:
    return [y.value(i, j) for i, j in lp.columns]


def lp_dump(lp: LinearProgram) -> str:
    """Readable LP text: objective line then one tagged row per line, rationals as p/q."""

    def term(coef: Fraction, c: int) -> str:
        i, j = lp.columns[c]
        return f"{coef} x[{i},{j}]"

    mode = "expectation" if lp.expectation else "realized"
    lines = [f"\\ variant {lp.variant.value} ({mode}), {lp.num_columns} columns, {len(lp.rows)} rows"]
    objective = " + ".join(term(a, c) for c, a in enumerate(lp.objective)) or "0"
    lines.append(f"maximize: {objective}")
    lines.append("subject to:")
    for row in lp.rows:
        lhs = " + ".join(term(a, c) for c, a in sorted(row.coefficients.items())) or "0"
        lines.append(f"  {row.tag}: {lhs} {row.relation.value} {row.rhs}")
    lines.append("bounds:")
    lines.append("  all x >= 0")
    return "\n".join(lines) + "\n"
