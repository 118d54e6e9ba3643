"""Command line entry point: run, validate, matrix, cost."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .canonical import canonical_text
from .errors import ChainFaasError, ParseError, RuntimeFailure, ValidationFailed
from .scenario_kit import (
    ScenarioId,
    cost_report,
    format_matrix,
    matrix_rows,
    parse_config,
    run_scenario,
    validate_scenario_config,
)


def _cmd_run(args) -> int:
    try:
        trace = run_scenario(args.config, seed=args.seed, ticks=args.ticks, out=args.out)
    except ValidationFailed as exc:
        for req, why in exc.gaps:
            print(f"missing {req}: {why}", file=sys.stderr)
        return 2
    except RuntimeFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    end = trace.of_kind("run_end")[-1]["detail"]
    print(f"wrote {len(trace.records)} records to {args.out} "
          f"(tip {end['tip']}, {end['tip_hash'][:12]})")
    return 0


def _cmd_validate(args) -> int:
    verdict = validate_scenario_config(parse_config(args.config))
    if verdict == "OK":
        print("OK")
        return 0
    for req, why in verdict:
        print(f"missing {req}: {why}")
    return 1


def _cmd_matrix(args) -> int:
    if args.json:
        print(canonical_text(matrix_rows(args.scenario)))
    else:
        print(format_matrix(args.scenario))
    return 0


def _cmd_cost(args) -> int:
    pricing = None
    if args.pricing:
        with open(args.pricing, encoding="utf-8") as fh:
            pricing = json.load(fh)
    report = cost_report(args.trace, pricing)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainfaas",
                                     description="Blockchain + serverless scenario simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario config and write a JSONL trace")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides chain.rng_seed")
    p.add_argument("--ticks", type=int, default=None, help="overrides the config's ticks")
    p.add_argument("--out", required=True, help="trace output path (.jsonl)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="check a config against the requirement matrix")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("matrix", help="print the requirement column of a scenario")
    p.add_argument("--scenario", required=True, choices=[s.value for s in ScenarioId])
    p.add_argument("--json", action="store_true", help="machine-readable rows")
    p.set_defaults(func=_cmd_matrix)

    p = sub.add_parser("cost", help="compare on-chain fees with FaaS billing in a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--pricing", default=None, help="JSON file overriding default pricing")
    p.set_defaults(func=_cmd_cost)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ChainFaasError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
