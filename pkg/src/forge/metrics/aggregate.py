"""Benchmark aggregation: pass sums, LOC-weighted averages, error profiles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from ..testbridge import ErrorCategory, TestReport


class EmptyResults(ValueError):
    pass


@dataclass(frozen=True)
class TaskResult:
    task: str
    loc_weight: int
    pass_count: int
    error_categories: frozenset[ErrorCategory] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "error_categories", frozenset(self.error_categories))
        if self.pass_count < 0:
            raise ValueError("pass count must be nonnegative")
        if self.loc_weight <= 0:
            raise ValueError("loc weight must be positive")


def aggregate(results: Iterable[TaskResult]) -> tuple[int, float]:
    """(sum of passes, LOC-weighted average of passes).

    The weighted average is sum(loc_i * pass_i) / sum(loc_i): larger tasks
    count proportionally to their reference size.
    """
    results = list(results)
    if not results:
        raise EmptyResults("no task results to aggregate")
    sum_pass = sum(r.pass_count for r in results)
    total_loc = sum(r.loc_weight for r in results)
    avg_weighted = sum(r.loc_weight * r.pass_count for r in results) / total_loc
    return sum_pass, avg_weighted


def report_categories(report: TestReport) -> frozenset[ErrorCategory]:
    """Distinct categories in one task's report; a category counts once."""
    return frozenset(r.category for r in report.results if r.category is not None)


def error_profile(reports: Iterable[TestReport]) -> Mapping[str, int]:
    """Category histogram across tasks; each task counts a category once."""
    counts: dict[str, int] = {}
    for report in reports:
        for category in report_categories(report):
            counts[category.value] = counts.get(category.value, 0) + 1
    return dict(sorted(counts.items()))
