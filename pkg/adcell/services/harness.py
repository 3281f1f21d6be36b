"""
Monte Carlo Harness

Seeded evaluation of the allocation pipelines:
- scenario sampling, one categorical draw per exclusivity group
- named instance generators (integrality gap, half-tight, random)
- per-trial runs with a Generator derived from (seed, trial), optionally
  replaying one fixed arrival scenario
- McReport statistics against the exact reference value of each policy

Per-trial revenues stay exact; floats appear only in the summary. Trials can
fan out over a process pool with asyncio.gather and are reassembled in trial
order, so the report does not depend on the job count.
"""

import asyncio
import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from adcell import config
from adcell.errors import PreconditionError, SizeGuardError
from adcell.services.lp import Variant, build_lp, solve_lp
from adcell.services.model import (
    ZERO,
    Instance,
    Scenario,
    ensure_valid,
    exclusivity_groups,
    max_bid_budget_ratio,
    to_fraction,
    truncate_bids,
    validate_scenario,
)
from adcell.services.offline_rounding import approx_ratio_bound, realized_lp, solve_offline
from adcell.services.online import (
    DpTables,
    ExpectationLp,
    allocate_ipb,
    allocate_ipbc,
    allocate_ipc,
    allocation_revenue,
    build_dp_tables,
    solve_expectation,
    stream_from_scenario,
)
from adcell.services.oracle import expected_offline_opt_exact, online_opt_exact

logger = logging.getLogger(__name__)

MIN_TRIALS = 100


class Policy(str, Enum):
    IPB = "ipb"
    IPC = "ipc"
    IPBC = "ipbc"
    OFFLINE_ROUND = "offline-round"

    @property
    def variant(self) -> Variant:
        return {
            Policy.IPB: Variant.B,
            Policy.IPC: Variant.C,
            Policy.IPBC: Variant.BC,
            Policy.OFFLINE_ROUND: Variant.BC,
        }[self]

    @property
    def guarantee(self) -> Optional[float]:
        """Worst-case fraction of the reference value; offline rounding depends on the instance."""
        return {
            Policy.IPB: 1 - 1 / math.e,
            Policy.IPC: 0.5,
            Policy.IPBC: 0.5 - 1 / math.e,
        }.get(self)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def draw_scenario(inst: Instance, groups: Sequence[Sequence[int]], rng: np.random.Generator) -> Scenario:
    """One categorical draw per group; groups come from exclusivity_groups and the instance is not re-validated."""
    arrived = [False] * inst.n
    for group in groups:
        u = rng.random()
        cumulative = ZERO
        for j in group:
            cumulative += inst.queries[j].prob
            if u < cumulative:
                arrived[j] = True
                break
    return Scenario(arrived=tuple(arrived))


def sample_scenario(inst: Instance, rng: np.random.Generator) -> Scenario:
    """Per group: query j with probability p_j, nothing with the rest; groups independent."""
    ensure_valid(inst)
    return draw_scenario(inst, exclusivity_groups(inst), rng)


def capacity_can_bind(inst: Instance) -> bool:
    """Some customer has more arrival times than ads it can hold."""
    times: Dict[int, int] = {}
    for group in exclusivity_groups(inst):
        k = inst.queries[group[0]].customer
        times[k] = times.get(k, 0) + 1
    return any(count > inst.customers[k].capacity for k, count in times.items())


def budget_can_bind(inst: Instance) -> bool:
    """Some advertiser could win more than its budget, taking its top bid in every group."""
    for i in range(inst.m):
        most = sum((max((inst.bid(i, j) for j in group), default=ZERO) for group in exclusivity_groups(inst)), ZERO)
        if most > inst.budget(i):
            return True
    return False


def guarantee_applies(inst: Instance, policy: Policy) -> bool:
    """
    LP_B has no capacity rows and LP_C no budget rows, so the IP_B and IP_C
    ratios only hold where those rows can never bind.
    """
    if policy is Policy.IPB:
        return not capacity_can_bind(inst)
    if policy is Policy.IPC:
        return not budget_can_bind(inst)
    return True


# ---------------------------------------------------------------------------
# Instance generators
# ---------------------------------------------------------------------------

def gen_integrality_gap(n: int) -> Instance:
    """One advertiser with budget 1; n queries with p = 1/n and bid 1 at distinct times; capacity n."""
    if n < 1:
        raise PreconditionError(f"gen_integrality_gap needs n >= 1, got {n}")
    p = Fraction(1, n)
    return Instance.create(
        budgets=[1],
        capacities=[n],
        queries=[(0, t + 1, p, {0: 1}) for t in range(n)],
    )


def gen_half_tight(eps: Union[Fraction, str]) -> Instance:
    """
    Capacity 1; q1 at time 1 with p = 1 - eps and bid 1, q2 at time 2 with
    p = eps and bid (1 - eps)/eps. The budget 1/eps never binds.
    """
    eps = to_fraction(eps)
    if not 0 < eps < 1:
        raise PreconditionError(f"gen_half_tight needs 0 < eps < 1, got {eps}")
    return Instance.create(
        budgets=[1 / eps],
        capacities=[1],
        queries=[
            (0, 1, 1 - eps, {0: 1}),
            (0, 2, eps, {0: (1 - eps) / eps}),
        ],
    )


DENOMINATORS = (2, 3, 4, 5, 6, 8, 10)


def gen_random_instance(
    m: int,
    n: int,
    s: int,
    bid_scale: int = 4,
    budget_scale: int = 6,
    seed: int = 0,
) -> Instance:
    """
    Seeded random instance: exclusivity groups of 1-3 queries at distinct
    times, positive small-denominator probabilities summing to at most 1 per
    group, integer bids capped at the bidder's budget, capacities in [1, 3].
    """
    if m < 1 or n < 0 or s < 1:
        raise PreconditionError(f"gen_random_instance needs m >= 1, n >= 0, s >= 1 (got {m}, {n}, {s})")
    if bid_scale < 1 or budget_scale < 1:
        raise PreconditionError("bid_scale and budget_scale must be >= 1")
    rng = np.random.default_rng(seed)
    budgets = [Fraction(int(rng.integers(1, budget_scale + 1))) for _ in range(m)]
    capacities = [int(rng.integers(1, 4)) for _ in range(s)]

    queries = []
    time = 0
    while len(queries) < n:
        time += 1
        size = min(int(rng.integers(1, 4)), n - len(queries))
        customer = int(rng.integers(0, s))
        denominator = int(rng.choice([d for d in DENOMINATORS if d >= size]))
        remaining = denominator
        for t in range(size):
            # keep at least one unit for each later query of the group
            top = remaining - (size - 1 - t)
            numerator = int(rng.integers(1, top + 1))
            remaining -= numerator
            bidders = [i for i in range(m) if rng.random() < 0.5]
            if not bidders:
                bidders = [int(rng.integers(0, m))]
            bids = {
                i: min(Fraction(int(rng.integers(1, bid_scale + 1))), budgets[i])
                for i in bidders
            }
            queries.append((customer, time, Fraction(numerator, denominator), bids))
    return ensure_valid(Instance.create(budgets=budgets, capacities=capacities, queries=queries))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class PolicyContext:
    """Everything a trial needs that does not depend on the trial."""
    inst: Instance
    policy: Policy
    groups: List[List[int]]
    expectation: Optional[ExpectationLp] = None
    dp: Optional[DpTables] = None
    fixed: Optional[Scenario] = None  # every trial replays these arrivals
    lp_cache: Dict[Tuple[bool, ...], Tuple] = field(default_factory=dict)

    @classmethod
    def prepare(cls, inst: Instance, policy: Policy, fixed: Optional[Scenario] = None) -> "PolicyContext":
        ensure_valid(inst)
        if fixed is not None:
            validate_scenario(inst, fixed)
        if policy is Policy.OFFLINE_ROUND:
            if max_bid_budget_ratio(inst) > 1:
                inst = truncate_bids(inst)
            return cls(inst=inst, policy=policy, groups=exclusivity_groups(inst), fixed=fixed)
        expectation = solve_expectation(inst, policy.variant)
        dp = build_dp_tables(inst, expectation) if policy is not Policy.IPB else None
        return cls(
            inst=inst, policy=policy, groups=exclusivity_groups(inst), expectation=expectation, dp=dp, fixed=fixed
        )

    def realized(self, scenario: Scenario):
        cached = self.lp_cache.get(scenario.arrived)
        if cached is None:
            cached = self.lp_cache[scenario.arrived] = realized_lp(self.inst, scenario)
        return cached


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    revenue: Fraction
    arrivals: int
    reference: Optional[Fraction] = None  # realized LP objective for offline rounding


def run_trial(ctx: PolicyContext, seed: int, trial: int) -> TrialOutcome:
    rng = trial_rng(seed, trial)
    scenario = ctx.fixed if ctx.fixed is not None else draw_scenario(ctx.inst, ctx.groups, rng)
    arrivals = sum(scenario.arrived)
    if ctx.policy is Policy.OFFLINE_ROUND:
        y_star, objective = ctx.realized(scenario)
        result = solve_offline(ctx.inst, scenario, rng, y_star=y_star, lp_objective=objective)
        return TrialOutcome(trial=trial, revenue=result.revenue, arrivals=arrivals, reference=objective)

    stream = stream_from_scenario(ctx.inst, scenario)
    if ctx.policy is Policy.IPB:
        log = allocate_ipb(ctx.inst, ctx.expectation, stream, rng)
    elif ctx.policy is Policy.IPC:
        log = allocate_ipc(ctx.inst, ctx.expectation, ctx.dp, stream, rng)
    else:
        log = allocate_ipbc(ctx.inst, ctx.expectation, ctx.dp, stream, rng)
    return TrialOutcome(trial=trial, revenue=allocation_revenue(ctx.inst, log), arrivals=arrivals)


def _run_chunk(
    inst: Instance, policy: Policy, seed: int, start: int, stop: int, fixed: Optional[Scenario] = None
) -> List[TrialOutcome]:
    """Worker entry point; builds its own context so nothing unpicklable crosses the pool."""
    ctx = PolicyContext.prepare(inst, policy, fixed)
    return [run_trial(ctx, seed, t) for t in range(start, stop)]


async def monte_carlo_async(
    inst: Instance, policy: Policy, trials: int, seed: int, jobs: int, fixed: Optional[Scenario] = None
) -> List[TrialOutcome]:
    """Split trials into contiguous chunks, one per worker, and gather them in order."""
    jobs = max(1, min(jobs, trials))
    bounds = [trials * w // jobs for w in range(jobs + 1)]
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        tasks = [
            loop.run_in_executor(pool, _run_chunk, inst, policy, seed, bounds[w], bounds[w + 1], fixed)
            for w in range(jobs)
        ]
        chunks = await asyncio.gather(*tasks)
    return [outcome for chunk in chunks for outcome in chunk]


def run_trials(
    inst: Instance,
    policy: Policy,
    trials: int,
    seed: int,
    jobs: Optional[int] = None,
    fixed: Optional[Scenario] = None,
) -> List[TrialOutcome]:
    """Seeded trials; with fixed arrivals only the policy's own draws vary between trials."""
    if trials < MIN_TRIALS:
        raise PreconditionError(f"Monte Carlo needs at least {MIN_TRIALS} trials, got {trials}")
    jobs = config.settings.default_jobs if jobs is None else jobs
    if jobs > 1:
        return asyncio.run(monte_carlo_async(inst, policy, trials, seed, jobs, fixed))
    ctx = PolicyContext.prepare(inst, policy, fixed)
    return [run_trial(ctx, seed, t) for t in range(trials)]


class McReport(BaseModel):
    policy: str
    trials: int
    seed: int
    mean: float
    std_error: float
    reference_label: str
    reference: str
    reference_value: float
    guarantee: float
    ratio: Optional[float] = None
    meets_guarantee: Optional[bool] = None
    oracles: Dict[str, str] = {}

    def csv_row(self) -> str:
        return report_csv_row(self)


CSV_FIELDS = [
    "policy", "trials", "seed", "mean", "std_error", "reference_label", "reference",
    "reference_value", "guarantee", "ratio", "meets_guarantee", "expected_offline", "online_opt",
]


def _mean_and_error(values: np.ndarray) -> Tuple[float, float]:
    mean = float(values.mean())
    std_error = float(values.std(ddof=1)) / math.sqrt(values.size) if values.size > 1 else 0.0
    return mean, std_error


def summarize(
    inst: Instance,
    policy: Policy,
    seed: int,
    outcomes: Sequence[TrialOutcome],
    expectation: Optional[ExpectationLp] = None,
    with_oracles: bool = False,
    fixed: Optional[Scenario] = None,
) -> McReport:
    """
    Online policies compare against the expectation LP of their variant;
    offline rounding compares revenue with bound * realized LP trial by
    trial, so its 3 SE band is on the paired difference. meets_guarantee
    stays None where guarantee_applies is False. With fixed arrivals the
    online policies compare against their realized LP and report no verdict.
    """
    revenues = np.array([float(o.revenue) for o in outcomes])
    mean, std_error = _mean_and_error(revenues)

    if policy is Policy.OFFLINE_ROUND:
        inst = truncate_bids(inst) if max_bid_budget_ratio(inst) > 1 else inst
        guarantee = approx_ratio_bound(inst)
        references = [o.reference for o in outcomes]
        exact_reference = sum(references, ZERO) / len(references)
        gaps = np.array([float(o.revenue - guarantee * o.reference) for o in outcomes])
        gap_mean, gap_error = _mean_and_error(gaps)
        meets = gap_mean >= -3 * gap_error
        label = "realized-lp-bc-mean"
        guarantee_value = float(guarantee)
    elif fixed is not None:
        exact_reference = solve_lp(build_lp(inst, policy.variant, fixed)).objective_value
        guarantee_value = policy.guarantee
        meets = None
        label = f"realized-lp-{policy.variant.value}"
    else:
        if expectation is None:
            expectation = solve_expectation(inst, policy.variant)
        exact_reference = expectation.objective
        guarantee_value = policy.guarantee
        meets = None
        if guarantee_applies(inst, policy):
            meets = mean >= guarantee_value * float(exact_reference) - 3 * std_error
        else:
            logger.info(f"The {policy.value} guarantee does not apply: rows missing from LP_{policy.variant.value} can bind")
        label = f"expectation-lp-{policy.variant.value}"

    oracles: Dict[str, str] = {}
    if with_oracles:
        try:
            oracles["expected_offline"] = str(expected_offline_opt_exact(inst))
            oracles["online_opt"] = str(online_opt_exact(inst))
        except SizeGuardError as e:
            logger.warning(f"Skipping oracle values: {e}")

    reference_value = float(exact_reference)
    report = McReport(
        policy=policy.value,
        trials=len(outcomes),
        seed=seed,
        mean=mean,
        std_error=std_error,
        reference_label=label,
        reference=str(exact_reference),
        reference_value=reference_value,
        guarantee=guarantee_value,
        ratio=mean / reference_value if reference_value else None,
        meets_guarantee=None if meets is None else bool(meets),
        oracles=oracles,
    )
    logger.info(
        f"Monte Carlo {policy.value}: mean {mean:.6f} +/- {std_error:.6f} over {len(outcomes)} trials, "
        f"reference {exact_reference}"
    )
    return report


def monte_carlo(
    inst: Instance,
    policy: Union[Policy, str],
    trials: int,
    seed: int,
    jobs: Optional[int] = None,
    with_oracles: bool = False,
    fixed: Optional[Scenario] = None,
) -> McReport:
    policy = Policy(policy)
    outcomes = run_trials(inst, policy, trials, seed, jobs, fixed)
    return summarize(inst, policy, seed, outcomes, with_oracles=with_oracles, fixed=fixed)


def report_csv_row(report: McReport, header: bool = False) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, lineterminator="\n")
    if header:
        writer.writeheader()
    row = report.model_dump(exclude={"oracles"})
    row["expected_offline"] = report.oracles.get("expected_offline", "")
    row["online_opt"] = report.oracles.get("online_opt", "")
    writer.writerow(row)
    return buffer.getvalue()


def write_trial_csv(path: Union[str, Path], outcomes: Sequence[TrialOutcome]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trial", "revenue", "revenue_float", "arrivals", "reference"])
        for o in outcomes:
            writer.writerow([
                o.trial,
                str(o.revenue),
                float(o.revenue),
                o.arrivals,
                "" if o.reference is None else str(o.reference),
            ])
