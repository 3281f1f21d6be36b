"""
Invariant suite for a single instance.

Runs every exact and seeded property the services promise and reports one
named entry per check. Checks whose enumeration trips a size guard are
reported as skipped, not failed. The ratio and martingale checks run the
Monte Carlo harness and need at least MIN_TRIALS trials; a ratio whose
guarantee does not apply to the instance is skipped as well.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, List, Optional, Tuple

import numpy as np

from adcell import config
from adcell.errors import AdCellError, SizeGuardError, SolverError
from adcell.services.harness import (
    MIN_TRIALS,
    Policy,
    PolicyContext,
    budget_can_bind,
    draw_scenario,
    run_trials,
    summarize,
    trial_rng,
)
from adcell.services.knapsack import check_policy, knapsack_dp, knapsack_from_customer, knapsack_oe
from adcell.services.lp import Variant, build_lp, check_solution, solve_lp, to_fractional_assignment
from adcell.services.model import (
    ZERO,
    Instance,
    Scenario,
    advertiser_payments,
    advertiser_spend,
    check_assignment,
    exclusivity_groups,
    fractional_revenue,
    validate_instance,
)
from adcell.services.offline_rounding import OfflineResult, SupportForest, forestify, solve_offline
from adcell.services.online import allocate_ipb, allocate_ipc, stream_from_scenario
from adcell.services.oracle import expected_offline_opt_exact, online_opt_exact, scenario_distribution

logger = logging.getLogger(__name__)


class CheckStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIP = "skip"


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: CheckStatus
    detail: str = ""


@dataclass
class VerificationReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.status is not CheckStatus.FAIL for c in self.checks)

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if c.status is CheckStatus.FAIL]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [{"name": c.name, "status": c.status.value, "detail": c.detail} for c in self.checks],
        }


class NotApplicable(Exception):
    """Raised by a check body when the property says nothing about this instance or run size."""


def _check(report: VerificationReport, name: str, body: Callable[[], Optional[str]]) -> None:
    """body returns None on success or a failure description."""
    try:
        problem = body()
    except SizeGuardError as e:
        report.checks.append(CheckResult(name, CheckStatus.SKIP, str(e)))
        return
    except NotApplicable as e:
        report.checks.append(CheckResult(name, CheckStatus.SKIP, str(e)))
        logger.info(f"check {name}: skip - {e}")
        return
    except AdCellError as e:
        problem = f"{type(e).__name__}: {e}"
    status = CheckStatus.PASS if problem is None else CheckStatus.FAIL
    report.checks.append(CheckResult(name, status, problem or ""))
    logger.info(f"check {name}: {status.value}{' - ' + problem if problem else ''}")


def _lp_objective(inst: Instance, variant: Variant, scenario: Optional[Scenario]) -> Fraction:
    lp = build_lp(inst, variant, scenario)
    sol = solve_lp(lp)
    broken = check_solution(lp, sol.values)
    if broken:
        raise SolverError(f"LP_{variant.value} solution breaks rows {[str(r.tag) for r in broken]}")
    return sol.objective_value


def run_invariant_suite(inst: Instance, seed: int, trials: int) -> VerificationReport:
    report = VerificationReport()

    def instance_valid() -> Optional[str]:
        validation = validate_instance(inst)
        return None if validation.is_valid else str(validation)

    _check(report, "instance-valid", instance_valid)
    if report.failures():
        return report

    groups = exclusivity_groups(inst)
    scenarios = [draw_scenario(inst, groups, trial_rng(seed, t)) for t in range(trials)]

    def variant_order() -> Optional[str]:
        checked = [("expectation", None)] + [(f"trial {t}", s) for t, s in enumerate(scenarios[:5])]
        for label, scenario in checked:
            b, c, bc = (_lp_objective(inst, v, scenario) for v in (Variant.B, Variant.C, Variant.BC))
            if bc > b or bc > c:
                return f"{label}: LP_BC {bc} exceeds LP_B {b} or LP_C {c}"
        return None

    _check(report, "lp-variant-order", variant_order)

    def expectation_dominance() -> Optional[str]:
        for variant in Variant:
            expected = ZERO
            for scenario, prob in scenario_distribution(inst):
                expected += prob * _lp_objective(inst, variant, scenario)
            bound = _lp_objective(inst, variant, None)
            if expected > bound:
                return f"LP_{variant.value}: E[realized] {expected} > expectation LP {bound}"
        return None

    _check(report, "expectation-lp-dominance", expectation_dominance)

    def forestify_exact() -> Optional[str]:
        for scenario in sorted(set(s.arrived for s in scenarios))[:20]:
            lp = build_lp(inst, Variant.BC, Scenario(arrived=scenario))
            y = to_fractional_assignment(lp, solve_lp(lp))
            forest = forestify(inst, y)
            if fractional_revenue(inst, forest) != fractional_revenue(inst, y):
                return f"forestify changed the objective for scenario {scenario}"
            if not SupportForest.from_values(forest.y).is_forest():
                return f"support still has a cycle for scenario {scenario}"
        return None

    _check(report, "forestify", forestify_exact)

    rounded = PolicyContext.prepare(inst, Policy.OFFLINE_ROUND)
    offline_runs: List[Tuple[Scenario, OfflineResult]] = []

    def rounding_constraints() -> Optional[str]:
        for t, scenario in enumerate(scenarios):
            y_star, objective = rounded.realized(scenario)
            result = solve_offline(rounded.inst, scenario, trial_rng(seed, t), y_star=y_star, lp_objective=objective)
            check_assignment(rounded.inst, result.assignment, scenario)
            offline_runs.append((scenario, result))
        return None

    _check(report, "rounding-constraints", rounding_constraints)

    def knapsack_bound() -> Optional[str]:
        for k in range(inst.s):
            ki = knapsack_from_customer(inst, k)
            if ki.total_prob() > ki.capacity or ki.capacity > config.settings.knapsack_max_capacity:
                continue
            policy = knapsack_dp(ki)
            problems = check_policy(policy, ki.grouped())
            if problems:
                return f"customer {k}: {problems[0]}"
            oe, value = knapsack_oe(ki), policy.value()
            if not oe / 2 <= value <= oe:
                return f"customer {k}: E[1][C] = {value} outside [{oe / 2}, {oe}]"
        return None

    _check(report, "knapsack-half-bound", knapsack_bound)

    def capacity_safety() -> Optional[str]:
        for policy in (Policy.IPB, Policy.IPC, Policy.IPBC):
            ctx = PolicyContext.prepare(inst, policy)
            for t, scenario in enumerate(scenarios):
                stream = stream_from_scenario(inst, scenario)
                rng = trial_rng(seed, t)
                if policy is Policy.IPB:
                    log = allocate_ipb(inst, ctx.expectation, stream, rng)
                else:
                    log = allocate_ipc(inst, ctx.expectation, ctx.dp, stream, rng)
                for k, used in enumerate(log.usage):
                    if used > inst.customers[k].capacity:
                        return f"{policy.value}: customer {k} used {used} > {inst.customers[k].capacity}"
        return None

    _check(report, "online-capacity-safety", capacity_safety)

    def oracle_sandwich() -> Optional[str]:
        online = online_opt_exact(inst)
        offline = expected_offline_opt_exact(inst)
        lp = _lp_objective(inst, Variant.BC, None)
        if not online <= offline <= lp:
            return f"online {online} <= expected offline {offline} <= expectation LP {lp} fails"
        return None

    _check(report, "oracle-sandwich", oracle_sandwich)

    def knapsack_matches_online_oracle() -> Optional[str]:
        if inst.s != 1:
            raise NotApplicable(f"{inst.s} customers; the knapsack covers a single customer")
        if budget_can_bind(inst):
            raise NotApplicable("a budget can bind, so the online problem is not a knapsack")
        ki = knapsack_from_customer(inst, 0)
        if ki.capacity > config.settings.knapsack_max_capacity:
            raise NotApplicable(f"capacity {ki.capacity} above the knapsack limit")
        dp_value, oracle = knapsack_dp(ki).value(), online_opt_exact(inst)
        if dp_value != oracle:
            return f"knapsack E[1][C] = {dp_value} but the online optimum is {oracle}"
        return None

    _check(report, "knapsack-online-oracle", knapsack_matches_online_oracle)

    def enough_trials() -> None:
        if trials < MIN_TRIALS:
            raise NotApplicable(f"needs at least {MIN_TRIALS} trials, got {trials}")

    def ratio(policy: Policy) -> Callable[[], Optional[str]]:
        def body() -> Optional[str]:
            enough_trials()
            outcomes = run_trials(inst, policy, trials, seed, jobs=1)
            mc = summarize(inst, policy, seed, outcomes)
            if mc.meets_guarantee is None:
                raise NotApplicable(f"rows missing from LP_{policy.variant.value} can bind")
            if not mc.meets_guarantee:
                return (
                    f"mean {mc.mean:.6f} +/- {mc.std_error:.6f} below {mc.guarantee:.4f} x "
                    f"{mc.reference_label} {mc.reference}"
                )
            return None

        return body

    for policy in Policy:
        _check(report, f"ratio-{policy.value}", ratio(policy))

    def payment_martingale() -> Optional[str]:
        enough_trials()
        if len(offline_runs) < trials:
            raise NotApplicable("rounding did not complete every trial")
        diffs = np.array([
            [
                float(paid - target)
                for paid, target in zip(
                    advertiser_spend(rounded.inst, result.assignment),
                    advertiser_payments(rounded.inst, rounded.realized(scenario)[0]),
                )
            ]
            for scenario, result in offline_runs
        ])
        means = diffs.mean(axis=0)
        errors = diffs.std(axis=0, ddof=1) / np.sqrt(len(diffs))
        for i, (mean, error) in enumerate(zip(means, errors)):
            if abs(mean) > 3 * error + 1e-9:
                return f"advertiser {i}: mean spend minus LP payment {mean:.6f} outside +/- 3 x {error:.6f}"
        return None

    _check(report, "rounding-martingale", payment_martingale)
    return report
