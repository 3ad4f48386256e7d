"""Bridge between the pipeline and test execution.

Two runner flavors share one report model: a scripted stub (pure lookup,
no processes, no filesystem writes) for hermetic pipeline tests, and a
shim client that materializes the snapshot into a scratch workspace and
invokes an external runner over a JSON-on-stdout protocol.
"""

from __future__ import annotations

import enum
import json
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .bundle import EnvSpec, TestFileEntry
from .workspace import RepoSnapshot, materialize, snapshot_digest


class TestBridgeError(RuntimeError):
    pass


class RunnerUnavailable(TestBridgeError):
    pass


class ScriptMiss(TestBridgeError):
    def __init__(self, digest: str, mode: str) -> None:
        super().__init__(f"stub has no scripted report for (digest={digest[:12]}..., mode={mode})")
        self.digest = digest
        self.mode = mode


class ShimProtocolError(TestBridgeError):
    pass


class ErrorCategory(enum.Enum):
    ASSERTION = "AssertionError"
    ATTRIBUTE = "AttributeError"
    TYPE = "TypeError"
    INDEX = "IndexError"
    VALUE = "ValueError"
    FILE_NOT_FOUND = "FileNotFoundError"
    NOT_IMPLEMENTED = "NotImplementedError"
    IMPORT = "ImportError"
    OTHER = "Other"


_CATEGORY_WORD_RE = re.compile(
    r"\b(" + "|".join(c.value for c in ErrorCategory if c is not ErrorCategory.OTHER) + r")\b"
)


def classify_error(message: str) -> ErrorCategory:
    """First category name appearing as a word in the message; Other if none."""
    match = _CATEGORY_WORD_RE.search(message or "")
    if match is None:
        return ErrorCategory.OTHER
    return ErrorCategory(match.group(1))


_STATUSES = ("pass", "fail", "error")
MODES = ("check", "unit", "syntax")


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a test case despite the name

    test_id: str
    status: str
    category: ErrorCategory | None = None
    message: str = ""

    def __post_init__(self) -> None:
        if self.status not in _STATUSES:
            raise ValueError(f"unknown test status {self.status!r}")
        if self.status == "pass" and self.category is not None:
            raise ValueError("passing results must not carry an error category")
        if self.status != "pass" and self.category is None:
            raise ValueError("failing results must carry an error category")


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a test case despite the name

    total: int
    passed: int
    failed: int
    results: tuple[TestResult, ...]
    raw_log: str = ""
    duration: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "results", tuple(self.results))
        if min(self.total, self.passed, self.failed) < 0:
            raise ValueError("report counts must be nonnegative")
        if self.passed + self.failed > self.total:
            raise ValueError("passed + failed cannot exceed total")

    @property
    def all_passed(self) -> bool:
        return self.passed == self.total and self.failed == 0

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "passed": self.passed,
            "failed": self.failed,
            "results": [
                {
                    "test_id": r.test_id,
                    "status": r.status,
                    "category": r.category.value if r.category else None,
                    "message": r.message,
                }
                for r in self.results
            ],
            "raw_log": self.raw_log,
            "duration": self.duration,
        }


def report_from_json(data: dict, allow_raw_log: bool = True) -> TestReport:
    """Validate a wire report; raises ShimProtocolError on any shape problem."""
    try:
        results = []
        for entry in data["results"]:
            status = entry["status"]
            raw_category = entry.get("category")
            category: ErrorCategory | None = None
            if raw_category is not None:
                try:
                    category = ErrorCategory(raw_category)
                except ValueError as exc:
                    raise ShimProtocolError(f"unknown error category {raw_category!r}") from exc
            results.append(
                TestResult(
                    test_id=str(entry["test_id"]),
                    status=status,
                    category=category,
                    message=str(entry.get("message") or ""),
                )
            )
        return TestReport(
            total=int(data["total"]),
            passed=int(data["passed"]),
            failed=int(data["failed"]),
            results=tuple(results),
            raw_log=str(data.get("raw_log") or "") if allow_raw_log else "",
            duration=float(data.get("duration") or 0.0),
        )
    except ShimProtocolError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ShimProtocolError(f"malformed report document: {exc}") from exc


class StubRunner:
    """Scripted reports keyed by (snapshot digest, mode). Zero side effects."""

    def __init__(self, script: dict[tuple[str, str], TestReport]) -> None:
        self.script = dict(script)

    @classmethod
    def from_file(cls, path: Path) -> "StubRunner":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        script: dict[tuple[str, str], TestReport] = {}
        for entry in data["entries"]:
            key = (entry["digest"], entry["mode"])
            script[key] = report_from_json(entry["report"])
        return cls(script)

    @staticmethod
    def script_to_json(script: dict[tuple[str, str], TestReport]) -> dict:
        return {
            "entries": [
                {"digest": digest, "mode": mode, "report": report.to_json()}
                for (digest, mode), report in sorted(script.items())
            ]
        }

    def run_tests(
        self,
        repo: RepoSnapshot,
        tests: frozenset | tuple = frozenset(),
        env: EnvSpec | None = None,
        mode: str = "check",
    ) -> TestReport:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        digest = snapshot_digest(repo)
        report = self.script.get((digest, mode))
        if report is None:
            raise ScriptMiss(digest, mode)
        return report


class ShimRunner:
    """Client for an external runner speaking the JSON-on-stdout protocol.

    The snapshot plus the relevant test files are copied into a fresh
    scratch directory per run; the candidate repo is never executed in
    place. A wall-clock timeout becomes a report-level error.
    """

    def __init__(self, shim_cmd, timeout: float = 120.0) -> None:
        if isinstance(shim_cmd, str):
            shim_cmd = [shim_cmd]
        self.shim_cmd = list(shim_cmd)
        self.timeout = timeout
        if not self.shim_cmd:
            raise RunnerUnavailable("empty shim command")
        resolved = shutil.which(self.shim_cmd[0])
        if resolved is None and not Path(self.shim_cmd[0]).exists():
            raise RunnerUnavailable(f"shim command not found: {self.shim_cmd[0]}")

    def run_tests(
        self,
        repo: RepoSnapshot,
        tests: tuple[TestFileEntry, ...] | frozenset = (),
        env: EnvSpec | None = None,
        mode: str = "check",
    ) -> TestReport:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        select_dir = {"check": "checks", "unit": "unittests", "syntax": "checks"}[mode]
        with tempfile.TemporaryDirectory(prefix="forge-shim-") as scratch:
            workspace = Path(scratch) / "workspace"
            materialize(repo, workspace)
            test_root = workspace / select_dir
            test_root.mkdir(parents=True, exist_ok=True)
            for entry in sorted(tests, key=lambda e: e.path):
                target = test_root / entry.path
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(entry.content, encoding="utf-8")
            cmd = self.shim_cmd + [
                "--workspace",
                str(workspace),
                "--mode",
                mode,
                "--select",
                select_dir,
            ]
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, text=True, timeout=self.timeout
                )
            except subprocess.TimeoutExpired:
                message = f"shim timed out after {self.timeout:g}s"
                return TestReport(
                    total=1,
                    passed=0,
                    failed=0,
                    results=(
                        TestResult(
                            test_id="<shim>",
                            status="error",
                            category=ErrorCategory.OTHER,
                            message=message,
                        ),
                    ),
                    raw_log=message,
                    duration=self.timeout,
                )
            except OSError as exc:
                raise RunnerUnavailable(f"could not invoke shim: {exc}") from exc
        if proc.returncode != 0:
            raise ShimProtocolError(
                f"shim exited with {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        try:
            payload = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise ShimProtocolError(
                f"shim stdout is not a single JSON document: {exc}"
            ) from exc
        if not isinstance(payload, dict):
            raise ShimProtocolError("shim report must be a JSON object")
        report = report_from_json(payload)
        if not report.raw_log:
            log_lines = [
                f"{r.test_id}: {r.status}" + (f" {r.message}" if r.message else "")
                for r in report.results
            ]
            report = TestReport(
                total=report.total,
                passed=report.passed,
                failed=report.failed,
                results=report.results,
                raw_log="\n".join(log_lines),
                duration=report.duration,
            )
        return report
