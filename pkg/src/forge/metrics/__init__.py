"""Evaluation metrics: pass aggregation and structural similarity."""

from .aggregate import EmptyResults, TaskResult, aggregate, error_profile, report_categories
from .sketchbleu import EmptyReference, FileScore, SketchBleuScore, sketchbleu

__all__ = [
    "EmptyReference",
    "EmptyResults",
    "FileScore",
    "SketchBleuScore",
    "TaskResult",
    "aggregate",
    "error_profile",
    "report_categories",
    "sketchbleu",
]
