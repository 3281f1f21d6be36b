"""
Experiment commands:
- simulate: Monte Carlo McReport for one policy
- oracle: exact brute-force values
- verify: the full invariant suite on one instance
"""

import argparse
import json
import logging
from pathlib import Path

from adcell.errors import InvariantViolation, PreconditionError
from adcell.schemas import load_instance, load_scenario, load_stream
from adcell.services.harness import Policy, report_csv_row, run_trials, summarize, write_trial_csv
from adcell.services.online import scenario_from_stream
from adcell.services.oracle import expected_offline_opt_exact, offline_opt_exact, online_opt_exact
from adcell.services.verification import run_invariant_suite

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    simulate = subparsers.add_parser("simulate", help="Monte Carlo evaluation of one policy")
    simulate.add_argument("-i", "--instance", required=True)
    simulate.add_argument("--policy", choices=[p.value for p in Policy], required=True)
    simulate.add_argument("--trials", type=int, required=True)
    simulate.add_argument("--seed", type=int, required=True)
    simulate.add_argument("--jobs", type=int, default=None, help="worker processes (default ADCELL_DEFAULT_JOBS)")
    simulate.add_argument("--csv", help="append the report as a CSV row")
    simulate.add_argument("--trials-csv", help="write per-trial revenues as CSV")
    simulate.add_argument("--oracles", action="store_true", help="attach exact oracle values when within guards")
    simulate.add_argument("--stream", help="JSON-lines arrival stream replayed by every trial")
    simulate.set_defaults(func=run_simulate)

    oracle = subparsers.add_parser("oracle", help="exact brute-force value")
    oracle.add_argument("-i", "--instance", required=True)
    oracle.add_argument("--which", choices=["offline", "expected-offline", "online"], required=True)
    oracle.add_argument("--scenario", help="scenario JSON (required for --which offline)")
    oracle.set_defaults(func=run_oracle)

    verify = subparsers.add_parser("verify", help="run the invariant suite on one instance")
    verify.add_argument("-i", "--instance", required=True)
    verify.add_argument("--seed", type=int, required=True)
    verify.add_argument("--trials", type=int, required=True)
    verify.set_defaults(func=run_verify)


def run_simulate(args: argparse.Namespace) -> None:
    inst = load_instance(args.instance)
    policy = Policy(args.policy)
    fixed = scenario_from_stream(inst, load_stream(args.stream)) if args.stream else None
    outcomes = run_trials(inst, policy, args.trials, args.seed, args.jobs, fixed)
    report = summarize(inst, policy, args.seed, outcomes, with_oracles=args.oracles, fixed=fixed)

    if args.trials_csv:
        write_trial_csv(args.trials_csv, outcomes)
    if args.csv:
        path = Path(args.csv)
        header = not path.exists() or path.stat().st_size == 0
        with open(path, "a", newline="") as f:
            f.write(report_csv_row(report, header=header))
    print(report.model_dump_json(indent=2))


def run_oracle(args: argparse.Namespace) -> None:
    inst = load_instance(args.instance)
    if args.which == "offline":
        if not args.scenario:
            raise PreconditionError("--which offline needs --scenario")
        value, assignment = offline_opt_exact(inst, load_scenario(args.scenario))
        logger.info(f"Best assignment {dict(sorted(assignment.assigned.items()))}")
    elif args.which == "expected-offline":
        value = expected_offline_opt_exact(inst)
    else:
        value = online_opt_exact(inst)
    print(value)


def run_verify(args: argparse.Namespace) -> None:
    inst = load_instance(args.instance)
    report = run_invariant_suite(inst, args.seed, args.trials)
    print(json.dumps(report.to_dict(), indent=2))
    failures = report.failures()
    if failures:
        raise InvariantViolation(
            f"{len(failures)} check(s) failed: " + "; ".join(f"{c.name}: {c.detail}" for c in failures)
        )
