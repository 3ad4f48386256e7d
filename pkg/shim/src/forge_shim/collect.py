"""Result collection for the shim.

Two execution paths produce the same record shape:

* ``run_pytest`` drives a pytest session over one selected directory and
  records one result per test, keeping the concrete exception class name.
* ``sweep_syntax`` parses every source file outside the selected directory
  and records one pseudo-result per file.

A record is a plain dict: ``test_id`` and ``status`` always, ``category``
and ``message`` only when the status is not ``pass``.
"""

from __future__ import annotations

import ast
import os
import sys
from pathlib import Path

# Exception class names reported verbatim; anything else collapses to Other.
# The match is byte-exact, so subclasses such as ModuleNotFoundError do not
# inherit their parent's slot.
KNOWN_CATEGORIES = (
    "AssertionError",
    "AttributeError",
    "TypeError",
    "IndexError",
    "ValueError",
    "FileNotFoundError",
    "NotImplementedError",
    "ImportError",
)
SINK_CATEGORY = "Other"

_MESSAGE_CAP = 400


def _category_for(exc_name: str | None) -> str:
    if exc_name in KNOWN_CATEGORIES:
        return exc_name
    return SINK_CATEGORY


def _unwrap(exc_value: BaseException) -> BaseException:
    """Follow the cause chain to the first recognized exception class.

    Collection failures reach the hooks wrapped in a pytest-internal error
    whose cause is the real ImportError/SyntaxError; the wrapper class name
    would otherwise classify as Other.  With no recognized class anywhere,
    the deepest cause is still the most informative one to report.
    """
    seen: set[int] = set()
    current: BaseException | None = exc_value
    deepest = exc_value
    while current is not None and id(current) not in seen:
        if type(current).__name__ in KNOWN_CATEGORIES:
            return current
        seen.add(id(current))
        deepest = current
        current = current.__cause__ or current.__context__
    return deepest


def _first_line(text: str) -> str:
    return text.strip().splitlines()[0] if text.strip() else ""


def _summary_line(text: str) -> str:
    """Most informative line of a formatted failure: the last E-line if any."""
    lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not lines:
        return ""
    for line in reversed(lines):
        if line.startswith("E "):
            return line[2:].strip()
    return lines[-1]


class ResultCollector:
    """Pytest plugin that turns session events into wire records.

    Statuses: a failure in the call phase is ``fail``; setup, teardown and
    collection problems are ``error``; skips are reported as ``error``
    because the wire format has no skip concept.  The first non-pass
    outcome for a test wins.
    """

    def __init__(self) -> None:
        self.records: dict[str, dict] = {}
        self.order: list[str] = []

    def results(self) -> list[dict]:
        out = []
        for nodeid in self.order:
            record = dict(self.records[nodeid])
            record.pop("_provisional", None)
            out.append(record)
        return out

    def _slot(self, nodeid: str) -> dict:
        if nodeid not in self.records:
            self.records[nodeid] = {"test_id": nodeid, "status": "pass"}
            self.order.append(nodeid)
        return self.records[nodeid]

    def _mark(
        self,
        nodeid: str,
        status: str,
        exc_name: str | None,
        message: str,
        provisional: bool = False,
    ) -> None:
        # The formatted report for a phase arrives before its exception
        # object does, so a text-derived record stays provisional until the
        # exact one lands.  A settled record never changes: the first
        # failing phase wins.
        record = self._slot(nodeid)
        if record["status"] != "pass" and not record.get("_provisional"):
            return
        record["status"] = status
        record["category"] = _category_for(exc_name)
        record["message"] = message[:_MESSAGE_CAP]
        if provisional:
            record["_provisional"] = True
        else:
            record.pop("_provisional", None)

    def pytest_exception_interact(self, node, call, report) -> None:
        # Runs while the real exception object is still on hand, before
        # pytest reduces it to formatted text.
        excinfo = getattr(call, "excinfo", None)
        if excinfo is None:
            return
        when = getattr(report, "when", None) or "collect"
        value = excinfo.value
        if when == "collect":
            value = _unwrap(value)
        name = type(value).__name__
        status = "fail" if when == "call" else "error"
        self._mark(node.nodeid, status, name, f"{name}: {_first_line(str(value))}")

    def pytest_runtest_logreport(self, report) -> None:
        if report.when == "call" and report.passed:
            self._slot(report.nodeid)
            return
        if report.skipped:
            reason = _first_line(getattr(report, "longreprtext", "")) or "skipped"
            self._mark(report.nodeid, "error", None, f"skipped: {reason}")
            return
        if report.failed:
            status = "fail" if report.when == "call" else "error"
            text = _summary_line(getattr(report, "longreprtext", "")) or "failed"
            self._mark(report.nodeid, status, None, text, provisional=True)

    def pytest_collectreport(self, report) -> None:
        if report.failed:
            nodeid = report.nodeid or "<collection>"
            text = _summary_line(getattr(report, "longreprtext", "")) or "collection failed"
            self._mark(nodeid, "error", None, text, provisional=True)


def run_pytest(workspace: Path, select: str) -> list[dict]:
    """Execute the tests under ``workspace/select`` and return records.

    The session runs with the workspace as both cwd and import root, so
    test ids come out as ``<select>/<file>::<test>``.  Stdout is parked on
    devnull at the file-descriptor level for the duration: nothing a test
    prints (or writes straight to fd 1) can contaminate the report stream.
    """
    import pytest

    if not (workspace / select).is_dir():
        return []

    collector = ResultCollector()
    old_cwd = os.getcwd()
    old_path = list(sys.path)
    saved_stdout = os.dup(1)
    devnull = os.open(os.devnull, os.O_WRONLY)
    try:
        os.chdir(workspace)
        sys.path.insert(0, str(workspace))
        sys.stdout.flush()
        os.dup2(devnull, 1)
        code = int(
            pytest.main(
                [
                    select,
                    "-q",
                    "-p",
                    "no:cacheprovider",
                    "--rootdir",
                    str(workspace),
                    "--basetemp",
                    str(workspace / ".shim-tmp"),
                    "--continue-on-collection-errors",
                ],
                plugins=[collector],
            )
        )
    finally:
        sys.stdout.flush()
        os.dup2(saved_stdout, 1)
        os.close(saved_stdout)
        os.close(devnull)
        os.chdir(old_cwd)
        sys.path[:] = old_path

    # 0 all passed, 1 some tests failed, 5 nothing collected: all are
    # successful shim runs.  Anything else means pytest itself fell over.
    if code not in (0, 1, 5):
        raise RuntimeError(f"pytest aborted with exit status {code}")
    return collector.results()


def sweep_syntax(workspace: Path, select: str) -> list[dict]:
    """Parse every project source file and return one record per file.

    Files under the selected test directory, hidden directories and
    ``__pycache__`` are not part of the product and are skipped.
    """
    select_parts = tuple(Path(select).parts)
    results: list[dict] = []
    for path in sorted(workspace.rglob("*.py")):
        rel = path.relative_to(workspace)
        parts = rel.parts
        if parts[: len(select_parts)] == select_parts:
            continue
        if any(part == "__pycache__" or part.startswith(".") for part in parts):
            continue
        test_id = rel.as_posix()
        try:
            ast.parse(path.read_text(encoding="utf-8"), filename=test_id)
        except (SyntaxError, UnicodeDecodeError, ValueError) as exc:
            line = getattr(exc, "lineno", None)
            detail = exc.msg if isinstance(exc, SyntaxError) else str(exc)
            prefix = f"line {line}: " if line else ""
            results.append(
                {
                    "test_id": test_id,
                    "status": "error",
                    "category": SINK_CATEGORY,
                    "message": f"{prefix}{detail}"[:_MESSAGE_CAP],
                }
            )
        else:
            results.append({"test_id": test_id, "status": "pass"})
    return results
