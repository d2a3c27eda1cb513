"""
命令行入口：driftcheck run / driftcheck report。

run 的退出码：所有记录都是 PASS（或没有匹配到配置）时为 0，存在 FAIL / ERROR 时为 1；
参数不合法为 2。
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from driftcheck import __version__
from driftcheck.constants import DEFAULT_ATOL_GRID
from driftcheck.errors import DriftCheckError, InvalidConfigError
from driftcheck.logging_config import setup_logging
from driftcheck.reportlog import read_records, render_report, summarize
from driftcheck.runcfg import expand_glob
from driftcheck.runner import BACKEND_NAMES, SweepPlan, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def parse_atol_grid(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--settings", default=None, help="harness settings file (default: $DRIFTCHECK_SETTINGS or ./driftcheck.yaml)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = argparse.ArgumentParser(prog="driftcheck", description="Differential numerics checks between inference backends.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run configs against backend pairs")
    run.add_argument("-c", "--configs", required=True, help="glob of run config YAML files")
    run.add_argument("--target", choices=BACKEND_NAMES, default=None, help="target backend (default: options.optimized)")
    run.add_argument("--compile", action="store_true", help="alias for --target optimized")
    run.add_argument(
        "--sweep-atol",
        type=parse_atol_grid,
        default=None,
        help=f"comma-separated atol grid, e.g. {','.join(f'{a:g}' for a in DEFAULT_ATOL_GRID)}",
    )
    run.add_argument("--rtol", type=float, default=None, help="rtol for every check (default: per config)")
    run.add_argument("--seed", type=int, default=None, help="seed override (default: per config, 5)")
    run.add_argument("--out", default="results.jsonl", help="JSONL file to append records to")
    run.add_argument("--jobs", type=int, default=1, help="number of worker threads")
    run.add_argument("--all-pairs", action="store_true", help="check every ordered backend pair, including self-pairs")

    report = sub.add_parser("report", parents=[common], help="summarize a JSONL results file")
    report.add_argument("--in", dest="input", required=True, help="JSONL results file")
    report.add_argument("--format", choices=("md", "csv"), default="md")
    report.add_argument("--out-dir", default=None, help="write report files here (markdown defaults to stdout)")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    if args.compile and args.target == "reference":
        raise InvalidConfigError("--compile", "conflicts with --target reference")
    plan = SweepPlan(
        config_paths=tuple(expand_glob(args.configs)),
        target="optimized" if args.compile else args.target,
        all_pairs=args.all_pairs,
        atol_grid=tuple(args.sweep_atol) if args.sweep_atol is not None else None,
        rtol=args.rtol,
        seed=args.seed,
        out_path=Path(args.out) if args.out else None,
        jobs=args.jobs,
        pattern=args.configs,
    )
    summary, _ = run_suite(plan)
    return EXIT_OK if summary.ok else EXIT_FAILED


def cmd_report(args: argparse.Namespace) -> int:
    if args.format == "csv" and not args.out_dir:
        raise InvalidConfigError("--out-dir", "is required for --format csv")
    records, skipped = read_records(args.input)
    if skipped:
        logger.warning("skipped %d malformed line(s) in %s", skipped, args.input)
    files = render_report(summarize(records), args.format)
    if not args.out_dir:
        sys.stdout.write(files["report.md"])
        return EXIT_OK
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (out_dir / name).write_text(content, encoding="utf-8")
        print(f"wrote {out_dir / name}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        setup_logging(args.settings, args.verbose)
    except (OSError, DriftCheckError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    handler = cmd_run if args.command == "run" else cmd_report
    try:
        return handler(args)
    except InvalidConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DriftCheckError as e:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
