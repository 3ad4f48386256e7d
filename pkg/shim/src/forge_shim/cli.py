"""Command line entry point.

Usage::

    forge-shim --workspace DIR --mode check|unit|syntax --select SUBDIR

Prints exactly one JSON report on stdout and exits 0, whatever the test
outcomes were.  A nonzero exit means the shim itself could not produce a
report (bad arguments, missing workspace, pytest infrastructure failure).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from forge_shim.collect import run_pytest, sweep_syntax

MODES = ("check", "unit", "syntax")


def build_report(results: list[dict], duration: float) -> dict:
    # Errors count toward total but not toward failed, so
    # passed + failed <= total always holds.
    passed = sum(1 for record in results if record["status"] == "pass")
    failed = sum(1 for record in results if record["status"] == "fail")
    return {
        "total": len(results),
        "passed": passed,
        "failed": failed,
        "results": results,
        "duration": round(duration, 6),
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="forge-shim",
        description="run one workspace's tests and print a JSON report",
    )
    parser.add_argument("--workspace", required=True, type=Path, help="project root to test")
    parser.add_argument("--mode", required=True, choices=MODES, help="what to execute")
    parser.add_argument("--select", required=True, help="test directory, relative to the workspace")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2

    workspace = args.workspace.resolve()
    if not workspace.is_dir():
        print(f"forge-shim: workspace is not a directory: {workspace}", file=sys.stderr)
        return 2
    select = Path(args.select)
    if select.is_absolute() or ".." in select.parts:
        print(f"forge-shim: --select must stay inside the workspace: {args.select}", file=sys.stderr)
        return 2

    start = time.perf_counter()
    try:
        if args.mode == "syntax":
            results = sweep_syntax(workspace, select.as_posix())
        else:
            results = run_pytest(workspace, select.as_posix())
    except Exception as exc:
        print(f"forge-shim: {exc}", file=sys.stderr)
        return 2

    report = build_report(results, time.perf_counter() - start)
    json.dump(report, sys.stdout)
    sys.stdout.write("\n")
    return 0
