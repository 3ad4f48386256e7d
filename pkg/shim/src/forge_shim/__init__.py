"""Standalone test-execution shim.

Runs the tests of a candidate workspace with pytest (or checks source
syntax) and prints exactly one JSON report document on stdout.  The
process exits nonzero only when the shim itself fails; failing tests are
ordinary data in the report.
"""

from forge_shim.collect import KNOWN_CATEGORIES, ResultCollector, run_pytest, sweep_syntax

__all__ = [
    "KNOWN_CATEGORIES",
    "ResultCollector",
    "run_pytest",
    "sweep_syntax",
]
