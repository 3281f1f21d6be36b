"""
`gen`: write a named instance family as JSON.
"""

import argparse
import logging

from adcell.schemas import dump_instance
from adcell.services.harness import gen_half_tight, gen_integrality_gap, gen_random_instance

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    gen = subparsers.add_parser("gen", help="generate an instance")
    families = gen.add_subparsers(dest="family", required=True)

    gap = families.add_parser("integrality-gap", help="one advertiser, n queries with p = 1/n")
    gap.add_argument("--n", type=int, required=True)
    gap.add_argument("-o", "--output", help="instance JSON path (stdout if omitted)")
    gap.set_defaults(func=run_gen)

    tight = families.add_parser("half-tight", help="two queries on one slot, tight for IP_C")
    tight.add_argument("--eps", required=True, help="rational in (0, 1), e.g. 1/10")
    tight.add_argument("-o", "--output")
    tight.set_defaults(func=run_gen)

    rand = families.add_parser("random", help="seeded random instance")
    rand.add_argument("--m", type=int, required=True, help="advertisers")
    rand.add_argument("--n", type=int, required=True, help="queries")
    rand.add_argument("--s", type=int, required=True, help="customers")
    rand.add_argument("--seed", type=int, required=True)
    rand.add_argument("--bid-scale", type=int, default=4)
    rand.add_argument("--budget-scale", type=int, default=6)
    rand.add_argument("-o", "--output")
    rand.set_defaults(func=run_gen)


def run_gen(args: argparse.Namespace) -> None:
    if args.family == "integrality-gap":
        inst = gen_integrality_gap(args.n)
    elif args.family == "half-tight":
        inst = gen_half_tight(args.eps)
    else:
        inst = gen_random_instance(
            args.m, args.n, args.s,
            bid_scale=args.bid_scale,
            budget_scale=args.budget_scale,
            seed=args.seed,
        )
    text = dump_instance(inst, args.output)
    if args.output:
        logger.info(f"Wrote {args.family} instance ({inst.m} advertisers, {inst.n} queries) to {args.output}")
    else:
        print(text)
