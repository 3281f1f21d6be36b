"""
`lp` and `solve-offline`: exact LP relaxations and offline rounding of one instance.
"""

import argparse
import logging
from pathlib import Path

from adcell.errors import CaseEngineError, PreconditionError
from adcell.schemas import (
    AssignmentValue,
    LpSolutionModel,
    OfflineReportModel,
    load_instance,
    load_scenario,
)
from adcell.services.harness import trial_rng
from adcell.services.lp import Variant, build_lp, lp_dump, solve_lp
from adcell.services.model import Scenario, format_fraction
from adcell.services.offline_rounding import RoundingTrace, solve_offline

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    lp = subparsers.add_parser("lp", help="solve LP_B, LP_C or LP_BC exactly")
    lp.add_argument("-i", "--instance", required=True)
    lp.add_argument("--variant", choices=[v.value for v in Variant], required=True)
    lp.add_argument("--mode", choices=["expectation", "realized"], required=True)
    lp.add_argument("--scenario", help="scenario JSON (realized mode; all queries arrive if omitted)")
    lp.add_argument("--dump", help="also write the LP as text to this path")
    lp.set_defaults(func=run_lp)

    offline = subparsers.add_parser("solve-offline", help="round the realized LP_BC solution of a scenario")
    offline.add_argument("-i", "--instance", required=True)
    offline.add_argument("--scenario", required=True)
    offline.add_argument("--seed", type=int, required=True)
    offline.add_argument("--trace", help="write the rounding trace as JSON lines")
    offline.set_defaults(func=run_solve_offline)


def run_lp(args: argparse.Namespace) -> None:
    inst = load_instance(args.instance)
    variant = Variant(args.variant)
    scenario = None
    if args.mode == "realized":
        scenario = load_scenario(args.scenario) if args.scenario else Scenario.all_arrived(inst)
    elif args.scenario:
        raise PreconditionError("--scenario only applies to --mode realized")

    program = build_lp(inst, variant, scenario)
    if args.dump:
        Path(args.dump).write_text(lp_dump(program))
    sol = solve_lp(program)
    logger.info(f"LP_{variant.value.upper()} ({args.mode}) {sol.status.value} after {sol.iterations} pivots")
    model = LpSolutionModel(
        variant=variant.value,
        mode=args.mode,
        status=sol.status.value,
        objective=format_fraction(sol.objective_value),
        objective_float=float(sol.objective_value),
        iterations=sol.iterations,
        values=[
            AssignmentValue(advertiser=i, query=j, value=format_fraction(v))
            for (i, j), v in zip(sol.columns, sol.values)
            if v != 0
        ],
    )
    print(model.model_dump_json(indent=2))


def _write_trace(path: str, trace: RoundingTrace) -> None:
    Path(path).write_text(trace.to_jsonl())
    logger.info(f"Wrote {len(trace)} rounding steps to {path}")


def run_solve_offline(args: argparse.Namespace) -> None:
    inst = load_instance(args.instance)
    scenario = load_scenario(args.scenario)
    try:
        result = solve_offline(inst, scenario, trial_rng(args.seed, 0))
    except CaseEngineError as e:
        if args.trace and e.trace is not None:
            _write_trace(args.trace, e.trace)
        raise
    if args.trace:
        _write_trace(args.trace, result.trace)

    ratio = result.ratio
    model = OfflineReportModel(
        revenue=format_fraction(result.revenue),
        revenue_float=float(result.revenue),
        lp_objective=format_fraction(result.lp_objective),
        ratio=None if ratio is None else format_fraction(ratio),
        bound=format_fraction(result.bound),
        assignment=[
            AssignmentValue(advertiser=i, query=j, value="1")
            for j, i in sorted(result.assignment.assigned.items())
        ],
        steps=len(result.trace),
        cases=result.trace.case_counts(),
    )
    print(model.model_dump_json(indent=2))
