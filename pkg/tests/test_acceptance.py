"""Release gate: the headline guarantees, one timed criterion per test.

Every test prints a single PASS/FAIL line (visible under pytest -s or in
captured output) and enforces a hard runtime budget alongside its checks.
"""

from __future__ import annotations

import contextlib
import io
import random
import time
from pathlib import Path

import pytest

from forge.cli import main
from forge.memory import MemoryEntry, MemoryStore, retrieve, tokenize
from forge.metrics.aggregate import TaskResult, aggregate, error_profile, report_categories
from forge.metrics.sketchbleu import sketchbleu, token_spans
from forge.orchestrator import (
    PhaseState,
    RunTrace,
    SteppedAfterEnd,
    caps_for_profile,
    step,
)
from forge.phases import GENERATION_PHASES, Phase
from forge.ssat import diff_ssat, parse_ssat, serialize_ssat
from forge.testbridge import ErrorCategory, TestReport, TestResult, classify_error
from forge.workspace import ImportGraph, RepoSnapshot, generation_order

from frozen_tables import (
    DEVBENCH_LOC,
    DEVBENCH_RUNS,
    PROJECT_EVAL_AVG,
    PROJECT_EVAL_LOC,
    PROJECT_EVAL_PASSES,
    PROJECT_EVAL_SUM,
)
from malformed_ssat import MALFORMED_DOCS
from oracles import bm25_rank, naive_sketchbleu_single_file, order_is_valid
from tree_gen import apply_diff, gen_tree, mutate_tree


@contextlib.contextmanager
def budget(name: str, seconds: float):
    """Time a criterion and print exactly one verdict line for it."""
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL {name}")
        raise
    elapsed = time.perf_counter() - start
    verdict = "PASS" if elapsed < seconds else "FAIL"
    print(f"{verdict} {name} ({elapsed:.2f}s, budget {seconds:g}s)")
    assert elapsed < seconds, f"{name} ran {elapsed:.2f}s, over its {seconds:g}s budget"


# --- criterion 1: weighted aggregation reproduces the frozen benchmark cells --------


def test_aggregation_reproduces_frozen_benchmark_cells():
    with budget("aggregation-frozen-benchmarks", 1.0):
        for name, (expected_sum, expected_avg, passes) in DEVBENCH_RUNS.items():
            results = [
                TaskResult(task=f"{name}-{i:02d}", loc_weight=loc, pass_count=p)
                for i, (loc, p) in enumerate(zip(DEVBENCH_LOC, passes))
            ]
            total, weighted = aggregate(results)
            assert total == expected_sum, name
            assert abs(weighted - expected_avg) <= 0.005, name

        results = [
            TaskResult(
                task=task,
                loc_weight=loc,
                pass_count=PROJECT_EVAL_PASSES.get(task, 0),
            )
            for task, loc in PROJECT_EVAL_LOC.items()
        ]
        total, weighted = aggregate(results)
        assert total == PROJECT_EVAL_SUM == 310
        assert abs(weighted - PROJECT_EVAL_AVG) <= 0.005


# --- criterion 2: the phase machine, exhaustively -----------------------------------


_PHASE_ORDER = [Phase.ARCH, Phase.SKELETON, Phase.CODEFILL, Phase.END]


def _expected_step(phase: Phase, iteration: int, accept: bool, caps) -> tuple[Phase, int]:
    if accept or iteration >= caps[phase]:
        return _PHASE_ORDER[_PHASE_ORDER.index(phase) + 1], 0
    return phase, iteration + 1


def test_phase_machine_matches_its_transition_rules_exhaustively():
    with budget("phase-machine-exhaustive", 1.0):
        for profile in ("small", "large"):
            caps = caps_for_profile(profile)
            for phase in GENERATION_PHASES:
                for iteration in range(caps[phase] + 1):
                    for accept in (False, True):
                        after = step(PhaseState(phase, iteration, caps), accept)
                        assert (after.current, after.iteration) == _expected_step(
                            phase, iteration, accept, caps
                        )
                        assert _PHASE_ORDER.index(after.current) >= _PHASE_ORDER.index(
                            phase
                        )
            with pytest.raises(SteppedAfterEnd):
                step(PhaseState(Phase.END, 0, caps), True)


# --- criterion 3: structured tree round-trips, rejections, and diff/apply ------------


def test_tree_serialization_diffing_and_malformed_rejection():
    with budget("ssat-round-trip-diff-apply", 5.0):
        rng = random.Random(1618)
        for _ in range(50):
            tree = gen_tree(rng)
            assert parse_ssat(serialize_ssat(tree)) == tree

        assert len(MALFORMED_DOCS) == 20
        for label, doc, expected_error in MALFORMED_DOCS:
            with pytest.raises(expected_error):
                parse_ssat(doc)

        for round_index in range(100):
            old = gen_tree(rng)
            new = mutate_tree(rng, old) if round_index % 2 == 0 else gen_tree(rng)
            assert apply_diff(old, diff_ssat(old, new)) == new, round_index


# --- criterion 4: memory retrieval against a brute-force ranker ----------------------


_VOCAB = (
    "import cycle missing rename signature judge verdict placeholder "
    "argument module export test failing path memory"
).split()


def test_memory_retrieval_matches_a_brute_force_ranker():
    with budget("memory-retrieval-bm25-oracle", 10.0):
        rng = random.Random(31415)
        for _ in range(100):
            phase = rng.choice(list(GENERATION_PHASES))
            store = MemoryStore(phase)
            for i in range(rng.randrange(1, 101)):
                summary = " ".join(
                    rng.choice(_VOCAB) for _ in range(rng.randrange(1, 31))
                )
                delta = rng.randrange(-2, 4) if phase is Phase.CODEFILL else None
                store = store.append(
                    MemoryEntry(
                        phase=phase,
                        iteration=i,
                        feedback=f"round {i} feedback",
                        diff=f"-old {i}\n+new {i}",
                        summary=summary,
                        pass_delta=delta,
                    )
                )
            query = " ".join(rng.choice(_VOCAB) for _ in range(rng.randrange(1, 8)))
            gamma = rng.randrange(1, 6)

            eligible = [
                e
                for e in store.entries
                if not (
                    phase is Phase.CODEFILL
                    and e.pass_delta is not None
                    and e.pass_delta < 0
                )
            ]
            scores = bm25_rank(
                tokenize(query), [tokenize(e.summary) for e in eligible]
            )
            expected = [
                e
                for e, _ in sorted(
                    zip(eligible, scores), key=lambda pair: (-pair[1], -pair[0].iteration)
                )
            ][:gamma]

            got = retrieve(store, query, gamma)
            assert got == expected
            assert all(e.pass_delta is None or e.pass_delta >= 0 for e in got)


# --- criterion 5: dependency-respecting file order ------------------------------------


# Each fixture: nodes, (importer, imported) edges with at least one cycle,
# and the exact order required by the collapse-and-sort policy.
_CYCLE_FIXTURES = [
    (
        ["x.py", "y.py", "z.py"],
        [("x.py", "y.py"), ("y.py", "x.py"), ("z.py", "x.py")],
        ["x.py", "y.py", "z.py"],
    ),
    (
        ["a.py", "b.py"],
        [("a.py", "b.py"), ("b.py", "a.py")],
        ["a.py", "b.py"],
    ),
    (
        ["a.py", "b.py", "c.py"],
        [("a.py", "b.py"), ("b.py", "c.py"), ("c.py", "a.py")],
        ["a.py", "b.py", "c.py"],
    ),
    (
        ["a.py", "b.py", "c.py", "d.py"],
        [("a.py", "b.py"), ("b.py", "a.py"), ("c.py", "d.py"), ("d.py", "c.py")],
        ["a.py", "b.py", "c.py", "d.py"],
    ),
    (
        ["a.py", "b.py", "c.py"],
        [("b.py", "c.py"), ("c.py", "b.py"), ("b.py", "a.py")],
        ["a.py", "b.py", "c.py"],
    ),
    (
        ["m.py", "x.py", "y.py", "z.py"],
        [("x.py", "y.py"), ("y.py", "x.py"), ("z.py", "y.py")],
        ["m.py", "x.py", "y.py", "z.py"],
    ),
    (
        ["a.py", "b.py", "c.py", "d.py", "e.py"],
        [
            ("b.py", "a.py"),
            ("c.py", "d.py"),
            ("d.py", "c.py"),
            ("c.py", "b.py"),
            ("e.py", "d.py"),
        ],
        ["a.py", "b.py", "c.py", "d.py", "e.py"],
    ),
    (
        ["p.py", "q.py", "r.py", "s.py"],
        [("p.py", "q.py"), ("q.py", "r.py"), ("r.py", "s.py"), ("s.py", "p.py")],
        ["p.py", "q.py", "r.py", "s.py"],
    ),
    (
        ["a.py", "b.py", "c.py"],
        [("a.py", "b.py"), ("b.py", "c.py"), ("c.py", "a.py"), ("a.py", "c.py")],
        ["a.py", "b.py", "c.py"],
    ),
    (
        ["a.py", "b.py", "c.py", "d.py", "z.py"],
        [
            ("a.py", "b.py"),
            ("b.py", "a.py"),
            ("c.py", "d.py"),
            ("d.py", "c.py"),
            ("c.py", "a.py"),
            ("z.py", "a.py"),
        ],
        ["a.py", "b.py", "c.py", "d.py", "z.py"],
    ),
]


def test_file_order_respects_imports_and_the_cycle_policy():
    with budget("import-order-topological", 5.0):
        rng = random.Random(2718)
        for _ in range(200):
            count = rng.randrange(1, 16)
            nodes = [f"pkg/m{i:02d}.py" for i in range(count)]
            edges = {
                (importer, imported)
                for importer in nodes
                for imported in nodes
                if importer != imported and rng.random() < 0.15
            }
            graph = ImportGraph(nodes=tuple(nodes), edges=tuple(sorted(edges)))
            order = generation_order(graph)
            assert sorted(order) == nodes
            assert order_is_valid(order, nodes, edges)
            assert generation_order(graph) == order
            shuffled = list(nodes)
            rng.shuffle(shuffled)
            relisted = ImportGraph(nodes=tuple(shuffled), edges=tuple(sorted(edges)))
            assert generation_order(relisted) == order

        assert len(_CYCLE_FIXTURES) == 10
        for nodes, edges, expected in _CYCLE_FIXTURES:
            graph = ImportGraph(nodes=tuple(nodes), edges=tuple(edges))
            assert generation_order(graph) == expected


# --- criterion 6: similarity score properties ------------------------------------------


ALPHA = (
    "def add(a, b):\n"
    "    total = a + b\n"
    "    return total\n"
    "\n"
    "\n"
    "def scale(x, k):\n"
    "    y = x * k\n"
    "    return y\n"
)

ALPHA_RENAMED = (
    "def mix(left, right):\n"
    "    amount = left + right\n"
    "    return amount\n"
    "\n"
    "\n"
    "def grow(base, times):\n"
    "    out = base * times\n"
    "    return out\n"
)

# Same countable-line weight as ALPHA so a missing file halves the score.
BETA = (
    "def flip(u, v):\n"
    "    w = u - v\n"
    "    return w\n"
    "\n"
    "\n"
    "def shift(p, q):\n"
    "    r = p + q\n"
    "    return r\n"
)

TINY = "def probe(n):\n    return n + 1\n"


def test_similarity_score_holds_its_documented_properties():
    with budget("sketchbleu-properties", 30.0):
        reference = RepoSnapshot({"pkg/alpha.py": ALPHA, "pkg/beta.py": BETA})

        identity = sketchbleu(reference, reference)
        assert abs(identity.total - 100.0) <= 0.1

        half = sketchbleu(RepoSnapshot({"pkg/alpha.py": ALPHA}), reference)
        weights = {f.path: f.weight for f in half.files}
        assert weights["pkg/alpha.py"] == weights["pkg/beta.py"]
        assert [f.missing for f in half.files] == [False, True]
        assert abs(half.total - 50.0) <= 1.0

        for candidate_src in (ALPHA, ALPHA_RENAMED, BETA, TINY):
            mine = sketchbleu(
                RepoSnapshot({"m.py": candidate_src}), RepoSnapshot({"m.py": ALPHA})
            ).total
            theirs = naive_sketchbleu_single_file(candidate_src, ALPHA)
            assert abs(mine - theirs) <= 0.1

        for source in (ALPHA, BETA, TINY):
            spans = token_spans(source)
            assert len(spans) <= 50
            single = RepoSnapshot({"m.py": source})

            # Deleting any one token never beats the intact source.
            for _, start, end in spans:
                score = sketchbleu(
                    RepoSnapshot({"m.py": source[:start] + source[end:]}), single
                )
                assert score.total <= 100.0 + 1e-9
                for part in (
                    score.bleu,
                    score.bleu_weight,
                    score.match_struc,
                    score.match_df,
                ):
                    assert 0.0 <= part <= 1.0

            # Cutting more and more of the tail never raises token similarity.
            previous = None
            for cut in range(len(spans) + 1):
                body = source if cut == 0 else source[: spans[len(spans) - cut][1]]
                score = sketchbleu(RepoSnapshot({"m.py": body}), single)
                assert score.total <= 100.0 + 1e-9
                if previous is not None:
                    assert score.bleu <= previous.bleu + 1e-9
                    assert score.bleu_weight <= previous.bleu_weight + 1e-9
                previous = score


# --- criterion 7: replayed pipelines are exact and deterministic -------------------------


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        item.relative_to(root).as_posix(): item.read_bytes()
        for item in sorted(root.rglob("*"))
        if item.is_file()
    }


def test_replayed_pipelines_are_deterministic_and_exact(
    scenario_all_accept, scenario_arch_rejected, scenario_exhausted, tmp_path
):
    cases = [
        ("clean", scenario_all_accept, 0, 7, {"arch": 0, "skeleton": 0, "codefill": 0}),
        ("redesign", scenario_arch_rejected, 0, 11, {"arch": 2, "skeleton": 0, "codefill": 0}),
        ("capped", scenario_exhausted, 2, 16, {"arch": 0, "skeleton": 0, "codefill": 5}),
    ]
    with budget("replay-determinism-end-to-end", 20.0):
        for label, scenario, expected_exit, expected_calls, memory_counts in cases:
            attempts = []
            for attempt in range(2):
                workdir = tmp_path / f"{label}-{attempt}"
                argv = [
                    "replay",
                    "--task", str(scenario["task_dir"]),
                    "--out", str(workdir / "out"),
                    "--cassette", str(scenario["cassette"]),
                    "--stub-script", str(scenario["stub_script"]),
                    "--runner", "stub",
                    "--runs-root", str(workdir / "runs"),
                ]
                with contextlib.redirect_stdout(io.StringIO()):
                    exit_code = main(argv)
                assert exit_code == expected_exit, label

                (run_dir,) = list((workdir / "runs").iterdir())
                assert run_dir.name.startswith("replay-")
                trace = RunTrace.load(run_dir / "trace.jsonl")
                assert trace.count("model_call") == expected_calls, label
                for phase_name, expected_entries in memory_counts.items():
                    text = (run_dir / "memory" / f"{phase_name}.jsonl").read_text(
                        encoding="utf-8"
                    )
                    lines = [line for line in text.splitlines() if line.strip()]
                    assert len(lines) == expected_entries, (label, phase_name)

                attempts.append(
                    (_tree_bytes(workdir / "out"), _tree_bytes(run_dir))
                )
            assert attempts[0] == attempts[1], f"{label}: reruns differ"


# --- criterion 8: failure taxonomy round-trip and per-task dedup ---------------------------


def _report_with(categories: list[ErrorCategory]) -> TestReport:
    results = tuple(
        TestResult(f"t.py::case{i}", "fail", cat, f"{cat.value}: boom")
        for i, cat in enumerate(categories)
    )
    return TestReport(total=len(results), passed=0, failed=len(results), results=results)


def test_failure_taxonomy_round_trips_and_dedups_per_task():
    with budget("error-classification-round-trip", 1.0):
        for category in ErrorCategory:
            assert classify_error(category.value) is category
            assert classify_error(f"run raised {category.value} at step 3") is category

        noisy = _report_with(
            [ErrorCategory.IMPORT, ErrorCategory.IMPORT, ErrorCategory.TYPE]
        )
        assert report_categories(noisy) == frozenset(
            {ErrorCategory.IMPORT, ErrorCategory.TYPE}
        )
        clean = TestReport(
            total=1, passed=1, failed=0, results=(TestResult("t.py::ok", "pass"),)
        )
        assert report_categories(clean) == frozenset()

        second = _report_with([ErrorCategory.IMPORT, ErrorCategory.ASSERTION])
        profile = error_profile([noisy, second, clean])
        assert profile == {"AssertionError": 1, "ImportError": 2, "TypeError": 1}
        assert list(profile) == sorted(profile)
