#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
HammerLab - command line interface

Subcommands:
- rates:     packet and hammering rates with threshold verdicts
- simulate:  discrete-event attack simulation
- sweep:     simulations over a parameter grid
- classify:  page-policy classification from timing curves
- banks:     bank-collision probabilities
- analyze:   dns | ocsp | rsa exploitability scans

Every command emits one report (stdout, or ``--out`` written atomically);
``--csv`` adds tabular extracts next to it.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

# Add project directory to path
sys.path.append(str(Path(__file__).resolve().parent.parent))

from core.reporting import build_report, csv_path_for, write_csv, write_report
from core.sweep_manager import parse_assignment
from error_handling import ErrorHandler, InvalidInputError, UsageError, safe_execute, setup_logging
from hammerlab_sdk import CommandResult, HammerLab

logger = logging.getLogger("HAMMERLAB.CLI")


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}", context={"usage": self.format_usage().strip()})


def _read(path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return f.read()
    except UnicodeDecodeError as e:
        raise InvalidInputError(f"{path} is not UTF-8 text: {e.reason} at byte {e.start}") from None


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in args.overrides or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got '{item}'")
        overrides[key.strip()] = _parse_value(value.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    return overrides


def run_rates(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    return lab.rates(args.bandwidth, args.frame, args.calls)


def run_simulate(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    return lab.simulate()


def run_sweep(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    grid: Dict[str, List[Any]] = {}
    for assignment in args.grid or []:
        grid.update(parse_assignment(assignment))
    return lab.sweep(grid or None)


def run_classify(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    return lab.classify()


def run_banks(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    return lab.banks(args.k, args.banks, args.trials)


def run_analyze_dns(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    return lab.analyze_dns(_read(args.input), args.domain or ())


def run_analyze_ocsp(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    return lab.analyze_ocsp(_read_bytes(args.input))


def run_analyze_rsa(lab: HammerLab, args: argparse.Namespace) -> CommandResult:
    return lab.analyze_rsa(_read(args.input), _read(args.after))


def build_parser() -> argparse.ArgumentParser:
    """Command-line parser; common flags are accepted after every subcommand"""
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON/TOML configuration or an earlier report")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (dotted path)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    common.add_argument("--out", help="report path; written atomically")
    common.add_argument("--csv", action="store_true", help="write CSV extracts next to the report")

    parser = _Parser(prog="hammerlab", description="Network-driven Rowhammer simulation toolkit")
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser, help="Available commands")

    rates_parser = subparsers.add_parser("rates", parents=[common], help="Packet and hammering rates")
    rates_parser.add_argument("--bandwidth", help="e.g. 500Mbit, 1Gbit/s")
    rates_parser.add_argument("--frame", type=int, help="frame size in bytes")
    rates_parser.add_argument("--calls", type=int, help="hammered-function calls per packet")
    rates_parser.set_defaults(func=run_rates)

    simulate_parser = subparsers.add_parser("simulate", parents=[common], help="Attack simulation")
    simulate_parser.set_defaults(func=run_simulate)

    sweep_parser = subparsers.add_parser("sweep", parents=[common], help="Simulations over a parameter grid")
    sweep_parser.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                              help="grid axis; replaces the configured grid")
    sweep_parser.set_defaults(func=run_sweep)

    classify_parser = subparsers.add_parser("classify", parents=[common], help="Page-policy classification")
    classify_parser.set_defaults(func=run_classify)

    banks_parser = subparsers.add_parser("banks", parents=[common], help="Bank-collision probabilities")
    banks_parser.add_argument("--k", type=int, nargs="+", help="address counts")
    banks_parser.add_argument("--banks", type=int, help="bank count; defaults to the geometry")
    banks_parser.add_argument("--trials", type=int, default=100_000, help="Monte-Carlo trials")
    banks_parser.set_defaults(func=run_banks)

    analyze_parser = subparsers.add_parser("analyze", help="Exploitability scans")
    targets = analyze_parser.add_subparsers(dest="target", parser_class=_Parser)
    dns_parser = targets.add_parser("dns", parents=[common], help="Bitsquat candidates")
    dns_parser.add_argument("--in", dest="input", help="zone file (name type value per line)")
    dns_parser.add_argument("--domain", action="append", help="single domain; repeatable")
    dns_parser.set_defaults(func=run_analyze_dns)
    ocsp_parser = targets.add_parser("ocsp", parents=[common], help="OCSP index flips")
    ocsp_parser.add_argument("--in", dest="input", required=True, help="OCSP index file")
    ocsp_parser.set_defaults(func=run_analyze_ocsp)
    rsa_parser = targets.add_parser("rsa", parents=[common], help="RSA key-store flips")
    rsa_parser.add_argument("--in", dest="input", help="key listing")
    rsa_parser.add_argument("--after", help="key listing after the attack")
    rsa_parser.set_defaults(func=run_analyze_rsa)
    return parser


def _command_name(args: argparse.Namespace) -> str:
    return f"analyze.{args.target}" if args.command == "analyze" else args.command


def _emit(command: str, lab: HammerLab, outcome: CommandResult, args: argparse.Namespace) -> None:
    report = build_report(command, lab.config, outcome.results)
    # Extracts go first; a report on disk always has all of its extracts.
    if args.csv or lab.config.output.csv:
        written: List[Path] = []
        try:
            for suffix, frame in outcome.frames.items():
                target = csv_path_for(args.out, f"{command}.{suffix}" if not args.out else suffix,
                                      lab.config.output.dir)
                written.append(write_csv(frame, target))
        except Exception:
            for path in written:
                path.unlink(missing_ok=True)
            raise
    if args.out:
        write_report(report, args.out)
    else:
        sys.stdout.write(report.to_json())


def _run(args: argparse.Namespace, handler: ErrorHandler) -> str:
    overrides = _overrides(args)
    lab = HammerLab(config_path=args.config, overrides=overrides)
    handler.error_docs_dir = lab.config.output.error_docs_dir
    if args.log_level is None:
        setup_logging(lab.config.logging.level, lab.config.logging.file)
    command = _command_name(args)
    logger.info(f"Running {command}")
    _emit(command, lab, args.func(lab, args), args)
    return command


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse ``argv``, run the command and emit its report.

    Returns:
        Process exit status; 0 on success
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    handler = ErrorHandler()
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return ErrorHandler.EXIT_CODES["usage_error"]

    parsed = safe_execute(parser.parse_args, argv, error_handler=handler)
    if parsed["success"]:
        args = parsed["result"]
        if getattr(args, "func", None) is None:
            parsed = safe_execute(parser.error, "a subcommand is required", error_handler=handler)
    if not parsed["success"]:
        return _report_error(parsed["error_doc"])

    setup_logging(args.log_level or "WARNING")
    outcome = safe_execute(_run, args, handler, error_handler=handler)
    if not outcome["success"]:
        return _report_error(outcome["error_doc"])
    return 0


def _report_error(error_doc: Dict[str, Any]) -> int:
    printable = {k: v for k, v in error_doc.items() if k != "stack_trace"}
    sys.stderr.write(json.dumps(printable, indent=2, sort_keys=True, default=str) + "\n")
    return int(error_doc["exit_code"])


def main():
    """Entry point for the command line"""
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
