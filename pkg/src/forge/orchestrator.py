"""Three-phase pipeline driver: architecture, skeleton, code fill.

Each phase loops generate -> judge -> refine under an iteration cap.
A rejection appends one memory entry (feedback, the change that produced
the judged output, and for code fill the pass-count delta) and the next
iteration retrieves related entries as prompt context. Reaching the cap
advances the phase with the current output; it is not an error.
"""

from __future__ import annotations

import itertools
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from . import agents
from .agents import (
    ResponseFormatError,
    parse_code_response,
    parse_codefill_feedback,
    parse_ssat_response,
    parse_verdict,
)
from .bundle import TaskBundle, bundle_digest
from .gateway import AgentRole, ChatRequest, Gateway, GatewayError
from .memory import MemoryEntry, MemoryStore, render_entry, retrieve, save_store
from .phases import GENERATION_PHASES, NEXT_PHASE, Phase
from .ssat import SsatError, SsatTree, diff_ssat, render_diff, serialize_ssat, summarize_diff
from .workspace import (
    PathEscape,
    RepoSnapshot,
    diff_code,
    extract_imports,
    generation_order,
    materialize,
    snapshot_digest,
    summarize_code_diff,
    syntax_gate,
)


class SteppedAfterEnd(RuntimeError):
    pass


class UnparseableAgentOutput(RuntimeError):
    pass


PROFILES: dict[str, dict[Phase, int]] = {
    "small": {Phase.ARCH: 3, Phase.SKELETON: 3, Phase.CODEFILL: 5},
    "large": {Phase.ARCH: 3, Phase.SKELETON: 3, Phase.CODEFILL: 10},
}


def caps_for_profile(name: str) -> dict[Phase, int]:
    try:
        return dict(PROFILES[name])
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")


@dataclass(frozen=True)
class PhaseState:
    current: Phase
    iteration: int
    caps: Mapping[Phase, int]

    def __post_init__(self) -> None:
        caps = dict(self.caps)
        for phase in GENERATION_PHASES:
            if caps.get(phase, 0) <= 0:
                raise ValueError(f"cap for {phase} must be a positive integer")
        object.__setattr__(self, "caps", caps)
        if self.iteration < 0:
            raise ValueError("iteration must be nonnegative")
        if self.current is not Phase.END and self.iteration > caps[self.current]:
            raise ValueError(
                f"iteration {self.iteration} exceeds cap {caps[self.current]} for {self.current}"
            )


def step(state: PhaseState, judge_accept: bool) -> PhaseState:
    """One transition: stay and count on rejection, advance on accept or cap."""
    if state.current is Phase.END:
        raise SteppedAfterEnd("the pipeline already ended")
    cap = state.caps[state.current]
    if judge_accept or state.iteration >= cap:
        return PhaseState(NEXT_PHASE[state.current], 0, state.caps)
    return PhaseState(state.current, state.iteration + 1, state.caps)


@dataclass(frozen=True)
class RunConfig:
    theta_a: float = 8.0
    theta_s: float = 8.0
    gamma: Mapping[Phase, int] = field(
        default_factory=lambda: {Phase.ARCH: 2, Phase.SKELETON: 2, Phase.CODEFILL: 2}
    )
    caps: Mapping[Phase, int] = field(default_factory=lambda: caps_for_profile("small"))
    backend: str = "replay"
    cassette_path: Path | None = None
    output_dir: Path = Path("out")
    runs_root: Path = Path("runs")
    runner: str = "stub"
    stub_script: Path | None = None
    shim_cmd: str | None = None
    timeout: float = 120.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma", dict(self.gamma))
        object.__setattr__(self, "caps", dict(self.caps))
        if self.backend not in ("live", "record", "replay"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.runner not in ("stub", "shim"):
            raise ValueError(f"unknown runner {self.runner!r}")
        for name, theta in (("theta_a", self.theta_a), ("theta_s", self.theta_s)):
            if not 0.0 <= theta <= 10.0:
                raise ValueError(f"{name} must lie in [0, 10], got {theta}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        for phase in GENERATION_PHASES:
            if self.gamma.get(phase, 0) < 0:
                raise ValueError(f"gamma for {phase} must be nonnegative")
            if self.caps.get(phase, 0) <= 0:
                raise ValueError(f"cap for {phase} must be a positive integer")


class RunTrace:
    """Ordered, timestamped, iteration-tagged event log for one run."""

    def __init__(self, clock: Callable[[], float] | None = None) -> None:
        self._clock = clock if clock is not None else time.time
        self.events: list[dict] = []

    def append(self, event: str, phase: Phase, iteration: int, **payload) -> dict:
        record = {
            "seq": len(self.events),
            "ts": self._clock(),
            "event": event,
            "phase": phase.value,
            "iter": iteration,
        }
        record.update(payload)
        self.events.append(record)
        return record

    def count(self, event: str, **filters) -> int:
        total = 0
        for record in self.events:
            if record["event"] != event:
                continue
            if all(record.get(k) == v for k, v in filters.items()):
                total += 1
        return total

    @property
    def outcome(self) -> str | None:
        for record in reversed(self.events):
            if record["event"] == "run_end":
                return record["outcome"]
        return None

    def save(self, path: Path) -> None:
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for record in self.events:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "RunTrace":
        import json

        trace = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    trace.events.append(json.loads(line))
        return trace


def build_gateway(cfg: RunConfig, digest: str) -> Gateway:
    if cfg.backend == "replay":
        if cfg.cassette_path is None or not Path(cfg.cassette_path).is_file():
            raise GatewayError(f"replay mode needs an existing cassette, got {cfg.cassette_path}")
        return Gateway.replay(cfg.cassette_path)
    if cfg.backend == "record":
        if cfg.cassette_path is None:
            raise GatewayError("record mode needs a cassette path")
        return Gateway.record(cfg.cassette_path, digest)
    return Gateway.live()


class _Run:
    """Mutable state for one pipeline execution."""

    def __init__(self, bundle: TaskBundle, cfg: RunConfig, runner, gateway: Gateway) -> None:
        self.bundle = bundle
        self.cfg = cfg
        self.runner = runner
        self.gateway = gateway
        self.digest = bundle_digest(bundle)
        if gateway.mode == "replay":
            counter = itertools.count()
            clock = lambda: next(counter)  # logical clock: byte-identical traces
            self.run_id = f"replay-{self.digest[:12]}"
        else:
            clock = time.time
            stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
            self.run_id = f"run-{stamp}-{self.digest[:6]}"
        self.trace = RunTrace(clock)
        self.run_dir = Path(cfg.runs_root) / self.run_id
        self.stores: dict[Phase, MemoryStore] = {
            phase: MemoryStore(phase) for phase in GENERATION_PHASES
        }
        self.state = PhaseState(Phase.ARCH, 0, cfg.caps)
        self.snapshot_seq = 0

    # -- plumbing ---------------------------------------------------------

    def prepare_dirs(self) -> None:
        if self.run_dir.exists():
            shutil.rmtree(self.run_dir)
        (self.run_dir / "memory").mkdir(parents=True)

    def complete_parsed(self, request: ChatRequest, parser: Callable[[str], object]):
        """Model call with one corrective reprompt on a parse failure."""
        response = self.gateway.complete(request)
        self.trace.append(
            "model_call",
            self.state.current,
            self.state.iteration,
            role=request.agent_role.value,
            digest=self.gateway.last_digest,
        )
        try:
            return parser(response), response
        except (ResponseFormatError, SsatError, PathEscape) as first_error:
            reprompt = agents.build_reprompt(request, response, str(first_error))
            response = self.gateway.complete(reprompt)
            self.trace.append(
                "model_call",
                self.state.current,
                self.state.iteration,
                role=request.agent_role.value,
                digest=self.gateway.last_digest,
            )
            try:
                return parser(response), response
            except (ResponseFormatError, SsatError, PathEscape) as second_error:
                raise UnparseableAgentOutput(
                    f"{request.agent_role.value} output unparseable after 2 attempts: "
                    f"{second_error}"
                ) from second_error

    def write_snapshot(self, snapshot: RepoSnapshot) -> None:
        name = f"iter-{self.snapshot_seq:03d}"
        self.snapshot_seq += 1
        materialize(snapshot, self.run_dir / name)
        self.trace.append(
            "snapshot_written",
            self.state.current,
            self.state.iteration,
            dir=name,
            digest=snapshot_digest(snapshot),
        )

    def advance(self, accept: bool) -> None:
        before = self.state
        self.state = step(self.state, accept)
        self.trace.append(
            "phase_transition",
            before.current,
            before.iteration,
            to_phase=self.state.current.value,
            to_iter=self.state.iteration,
            accepted=accept,
        )

    def remember(self, phase: Phase, feedback: str, diff_text: str, summary: str,
                 pass_delta: int | None = None) -> None:
        entry = MemoryEntry(
            phase=phase,
            iteration=self.state.iteration,
            feedback=feedback,
            diff=diff_text,
            summary=summary,
            pass_delta=pass_delta,
        )
        self.stores[phase] = self.stores[phase].append(entry)
        event = {"pass_delta": pass_delta} if pass_delta is not None else {}
        self.trace.append("memory_append", phase, self.state.iteration, **event)

    def recall(self, phase: Phase, query: str | None) -> tuple[str, ...]:
        if query is None:
            return ()
        entries = retrieve(self.stores[phase], query, self.cfg.gamma[phase])
        return tuple(render_entry(e) for e in entries)

    @staticmethod
    def initial_summary(feedback: str) -> str:
        concern = " ".join(feedback.split())
        if len(concern) > 240:
            concern = concern[:240] + "..."
        return f"initial version\naddresses: {concern}"

    # -- phases -----------------------------------------------------------

    def run_arch(self) -> SsatTree:
        tree: SsatTree | None = None
        prev_tree: SsatTree | None = None
        feedback: str | None = None
        while self.state.current is Phase.ARCH:
            if self.state.iteration >= self.state.caps[Phase.ARCH]:
                self.advance(False)
                break
            memory_ctx = self.recall(Phase.ARCH, feedback)
            request = agents.build_arch_prompt(self.bundle, memory_ctx, feedback)
            tree, _ = self.complete_parsed(request, parse_ssat_response)
            judge_request = agents.build_judge_a_prompt(tree, self.bundle)
            verdict, verdict_text = self.complete_parsed(
                judge_request,
                lambda r: parse_verdict(r, agents.JUDGE_A_DIMENSIONS, self.cfg.theta_a),
            )
            self.trace.append(
                "verdict",
                self.state.current,
                self.state.iteration,
                judge=AgentRole.JUDGE_A.value,
                overall=verdict.overall,
                accepted=verdict.accept,
                dimensions=[[name, score] for name, score, _ in verdict.dimensions],
            )
            if verdict.accept:
                self.advance(True)
                break
            feedback = verdict_text
            if prev_tree is None:
                diff_text = "(initial version)"
                summary = self.initial_summary(feedback)
            else:
                records = diff_ssat(prev_tree, tree)
                diff_text = render_diff(records)
                summary = summarize_diff(records, feedback)
            self.remember(Phase.ARCH, feedback, diff_text, summary)
            prev_tree = tree
            self.advance(False)
        assert tree is not None
        (self.run_dir / "ssat.json").write_text(serialize_ssat(tree), encoding="utf-8")
        return tree

    def _generate_skeleton_files(
        self, tree: SsatTree, memory_ctx: tuple[str, ...], feedback: str | None
    ) -> dict[str, str]:
        files: dict[str, str] = {}
        for file_node in tree.files():
            request = agents.build_skeleton_prompt(tree, file_node, memory_ctx, feedback)

            def parse_single(resp: str, expected: str = file_node.path) -> str:
                entries = parse_code_response(resp)
                if len(entries) != 1 or entries[0][0] != expected:
                    raise ResponseFormatError(
                        f"expected exactly one file block for {expected}"
                    )
                return entries[0][1]

            body, _ = self.complete_parsed(request, parse_single)
            files[file_node.path] = body
        return files

    def run_skeleton(self, tree: SsatTree) -> RepoSnapshot:
        snapshot: RepoSnapshot | None = None
        prev_snapshot: RepoSnapshot | None = None
        feedback: str | None = None
        while self.state.current is Phase.SKELETON:
            if self.state.iteration >= self.state.caps[Phase.SKELETON]:
                self.advance(False)
                break
            memory_ctx = self.recall(Phase.SKELETON, feedback)
            files = self._generate_skeleton_files(tree, memory_ctx, feedback)
            snapshot = RepoSnapshot(
                files, created_at=f"skeleton/iter-{self.state.iteration}"
            )
            self.write_snapshot(snapshot)
            failures = syntax_gate(snapshot, self.runner)
            self.trace.append(
                "test_report",
                self.state.current,
                self.state.iteration,
                mode="syntax",
                failures=len(failures),
            )
            if failures:
                # First-stage rejection: compiler diagnostics stand in for the
                # judge and the iteration is consumed without a model call.
                accepted = False
                feedback = "syntax errors:\n" + "\n".join(
                    f"{path}: {message}" for path, message in failures
                )
            else:
                judge_request = agents.build_judge_s_prompt(snapshot, tree)
                verdict, verdict_text = self.complete_parsed(
                    judge_request,
                    lambda r: parse_verdict(r, agents.JUDGE_S_DIMENSIONS, self.cfg.theta_s),
                )
                self.trace.append(
                    "verdict",
                    self.state.current,
                    self.state.iteration,
                    judge=AgentRole.JUDGE_S.value,
                    overall=verdict.overall,
                    accepted=verdict.accept,
                    dimensions=[[name, score] for name, score, _ in verdict.dimensions],
                )
                accepted = verdict.accept
                if not accepted:
                    feedback = verdict_text
            if accepted:
                self.advance(True)
                break
            assert feedback is not None
            if prev_snapshot is None:
                diff_text = "(initial version)"
                summary = self.initial_summary(feedback)
            else:
                diff_text = diff_code(prev_snapshot, snapshot)
                summary = summarize_code_diff(prev_snapshot, snapshot, feedback)
            self.remember(Phase.SKELETON, feedback, diff_text, summary)
            prev_snapshot = snapshot
            self.advance(False)
        assert snapshot is not None
        return snapshot

    def run_codefill(self, skeleton: RepoSnapshot) -> tuple[RepoSnapshot, str]:
        order = generation_order(extract_imports(skeleton))
        current = skeleton
        prev_snapshot: RepoSnapshot | None = None
        feedback: str | None = None
        target_paths: tuple[str, ...] = ()
        best: tuple[int, int, RepoSnapshot] | None = None  # (passes, iteration, snapshot)
        passes_before = 0
        while self.state.current is Phase.CODEFILL:
            if self.state.iteration >= self.state.caps[Phase.CODEFILL]:
                self.advance(False)
                assert best is not None
                return best[2], "exhausted"
            memory_ctx = self.recall(Phase.CODEFILL, feedback)
            first_iteration = self.state.iteration == 0
            if first_iteration:
                targets = list(order)
            else:
                targets = [p for p in order if p in target_paths]
                if not targets:
                    targets = list(order)
            working = dict(current.files)
            filled: list[str] = []
            for path in order:
                if path not in targets:
                    continue
                if first_iteration:
                    context = tuple((p, working[p]) for p in filled)
                else:
                    context = tuple((p, working[p]) for p in order if p != path)
                request = agents.build_codefill_prompt(
                    (path, working[path]), context, memory_ctx, feedback
                )

                def parse_single(resp: str, expected: str = path) -> str:
                    entries = parse_code_response(resp)
                    if len(entries) != 1 or entries[0][0] != expected:
                        raise ResponseFormatError(
                            f"expected exactly one file block for {expected}"
                        )
                    return entries[0][1]

                body, _ = self.complete_parsed(request, parse_single)
                working[path] = body
                filled.append(path)
            current = RepoSnapshot(
                working, created_at=f"codefill/iter-{self.state.iteration}"
            )
            self.write_snapshot(current)
            report = self.runner.run_tests(
                current, self.bundle.check_tests, self.bundle.env_spec, "check"
            )
            self.trace.append(
                "test_report",
                self.state.current,
                self.state.iteration,
                mode="check",
                total=report.total,
                passed=report.passed,
                failed=report.failed,
            )
            if report.all_passed:
                self.advance(True)
                return current, "passed"
            if best is None or report.passed > best[0]:
                best = (report.passed, self.state.iteration, current)
            judge_request = agents.build_judge_c_prompt(report, report.raw_log, current)
            triage, triage_text = self.complete_parsed(judge_request, parse_codefill_feedback)
            self.trace.append(
                "triage",
                self.state.current,
                self.state.iteration,
                files=list(triage.files_to_modify),
            )
            delta = report.passed - passes_before
            feedback = triage_text
            if prev_snapshot is None:
                diff_text = "(initial version)"
                summary = self.initial_summary(feedback)
            else:
                diff_text = diff_code(prev_snapshot, current)
                summary = summarize_code_diff(prev_snapshot, current, feedback)
            self.remember(Phase.CODEFILL, feedback, diff_text, summary, pass_delta=delta)
            target_paths = triage.files_to_modify
            prev_snapshot = current
            passes_before = report.passed
            self.advance(False)
        raise AssertionError("unreachable")

    # -- entry point --------------------------------------------------------

    def execute(self) -> tuple[RepoSnapshot, RunTrace]:
        self.prepare_dirs()
        tree = self.run_arch()
        skeleton = self.run_skeleton(tree)
        final, outcome = self.run_codefill(skeleton)
        self.trace.append(
            "run_end",
            Phase.END,
            0,
            outcome=outcome,
            final_digest=snapshot_digest(final),
        )
        out_dir = Path(self.cfg.output_dir)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        materialize(final, out_dir)
        for phase in GENERATION_PHASES:
            save_store(self.stores[phase], self.run_dir / "memory" / f"{phase.value}.jsonl")
        self.trace.save(self.run_dir / "trace.jsonl")
        return final, self.trace


def run(
    bundle: TaskBundle, cfg: RunConfig, runner, gateway: Gateway | None = None
) -> tuple[RepoSnapshot, RunTrace]:
    """Drive the full pipeline; returns the emitted snapshot and its trace.

    The trace's outcome is "passed" when the final snapshot clears every
    check test and "exhausted" when the fill cap ran out, in which case the
    snapshot is the iteration with the highest pass count (earliest wins
    ties). Gateway and runner errors propagate to the caller.
    """
    if gateway is None:
        gateway = build_gateway(cfg, bundle_digest(bundle))
    return _Run(bundle, cfg, runner, gateway).execute()
