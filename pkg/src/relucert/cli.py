"""Command-line entry points: verification and bound inspection."""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .errors import RelucertError
from .model import InputBox, load_input_spec, load_network
from .search import SearchConfig, verify
from .symbolic import RelaxationMode, bounds_dump, compute_layer_bounds

EXIT_SAFE = 0
EXIT_UNSAFE = 1
EXIT_UNDETERMINED = 2
EXIT_USAGE = 64


class _CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise SystemExit2(message)


class SystemExit2(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="relucert", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, help_text in (
        ("verify", "run branch-and-bound verification"),
        ("bounds", "dump per-node bounds for the root subproblem"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--network", required=True, help="network JSON file")
        p.add_argument("--input", required=True, help="input spec JSON file")
        p.add_argument(
            "--mode",
            choices=["coupled", "independent", "zero-bounding"],
            default="zero-bounding",
        )
        p.add_argument("--epsilon", type=float, default=None,
                       help="override the epsilon from the input file")
        p.add_argument("--timeout", type=float, default=3600.0,
                       help="global wall-clock budget in seconds")
        p.add_argument("--lp-timeout", type=float, default=30.0,
                       help="per-LP wall-clock budget in seconds")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--output", default=None, help="report path (default stdout)")
        p.add_argument("--seed", type=int, default=0)
    return parser


def _load(args):
    with open(args.network, encoding="utf-8") as fh:
        net = load_network(fh.read())
    with open(args.input, encoding="utf-8") as fh:
        box, prop = load_input_spec(fh.read())
    if args.epsilon is not None:
        if args.epsilon < 0:
            raise RelucertError("epsilon must be non-negative")
        box = InputBox(center=box.center, epsilon=args.epsilon, clip=box.clip)
    return net, box, prop


def _emit(report: dict, output: Optional[str]) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if output is None:
        print(text)
    else:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def cmd_verify(args) -> int:
    net, box, prop = _load(args)
    cfg = SearchConfig(
        mode=RelaxationMode.parse(args.mode),
        global_timeout=args.timeout if args.timeout > 0 else None,
        lp_budget=args.lp_timeout if args.lp_timeout > 0 else None,
        workers=max(1, args.threads),
    )
    verdict = verify(net, box, prop, cfg)
    report = {
        "verdict": verdict.status,
        "stats": {
            "subproblems": verdict.subproblems,
            "lp_calls": verdict.lp_calls,
            "wall_time_s": verdict.wall_time,
        },
        "mode": args.mode,
        "epsilon": box.epsilon,
        "label": prop.true_label,
    }
    if verdict.witness is not None:
        report["witness"] = [float(v) for v in verdict.witness]
    if verdict.reason is not None:
        report["reason"] = verdict.reason
    _emit(report, args.output)
    return {
        "safe": EXIT_SAFE,
        "unsafe": EXIT_UNSAFE,
        "undetermined": EXIT_UNDETERMINED,
    }[verdict.status]


def cmd_bounds(args) -> int:
    net, box, prop = _load(args)
    table = compute_layer_bounds(net, box, RelaxationMode.parse(args.mode))
    report = bounds_dump(table)
    report["epsilon"] = box.epsilon
    report["label"] = prop.true_label
    _emit(report, args.output)
    return EXIT_SAFE


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.subcommand == "verify":
            return cmd_verify(args)
        return cmd_bounds(args)
    except (RelucertError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
