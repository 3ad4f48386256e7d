"""Command line interface.

Exit codes: 0 when the emitted repository passed every check test, 2 when
an iteration cap ran out (a best-effort repository is still emitted), and
1 for any fatal error including bad usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from . import __version__, orchestrator
from .bundle import BundleError, load_bundle
from .gateway import GatewayError
from .metrics import EmptyReference, error_profile, sketchbleu
from .orchestrator import RunConfig, RunTrace, UnparseableAgentOutput, caps_for_profile
from .phases import GENERATION_PHASES, Phase
from .ssat import SsatError, parse_ssat
from .testbridge import ShimRunner, StubRunner, TestBridgeError
from .workspace import PathEscape, load_snapshot

CONFIG_NAME = "forge.toml"

# forge.toml keys; flags with the same (dashes-to-underscores) name override.
_CONFIG_KEYS = (
    "backend",
    "cassette",
    "profile",
    "theta_a",
    "theta_s",
    "gamma",
    "runner",
    "stub_script",
    "shim_cmd",
    "timeout",
    "runs_root",
)


class CliError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="forge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"forge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser, forced_backend: str | None = None) -> None:
        p.add_argument("--task", required=True, type=Path, help="task bundle directory")
        p.add_argument("--out", required=True, type=Path, help="output repository directory")
        p.add_argument("--config", type=Path, help="explicit forge.toml path")
        if forced_backend is None:
            p.add_argument(
                "--backend", choices=("live", "record", "replay"), help="model transport"
            )
        p.add_argument("--cassette", type=Path, help="cassette file for record/replay")
        p.add_argument("--profile", choices=("small", "large"), help="iteration cap profile")
        p.add_argument("--theta-a", type=float, help="architecture accept threshold")
        p.add_argument("--theta-s", type=float, help="skeleton accept threshold")
        p.add_argument("--gamma", type=int, help="memory entries retrieved per phase")
        p.add_argument("--runner", choices=("stub", "shim"), help="test runner kind")
        p.add_argument("--stub-script", type=Path, help="scripted reports for the stub runner")
        p.add_argument("--shim-cmd", help="external runner command")
        p.add_argument("--timeout", type=float, help="per-invocation runner timeout, seconds")
        p.add_argument("--runs-root", type=Path, help="directory that holds run artifacts")

    gen = sub.add_parser("generate", help="run the full pipeline on a task bundle")
    add_run_flags(gen)

    rep = sub.add_parser("replay", help="re-run a task from a recorded cassette")
    add_run_flags(rep, forced_backend="replay")

    ev = sub.add_parser("evaluate", help="score a candidate repository against a bundle")
    ev.add_argument("--task", required=True, type=Path)
    ev.add_argument("--candidate", required=True, type=Path, help="repository to score")
    ev.add_argument("--config", type=Path)
    ev.add_argument("--runner", choices=("stub", "shim"))
    ev.add_argument("--stub-script", type=Path)
    ev.add_argument("--shim-cmd", help="external runner command")
    ev.add_argument("--timeout", type=float)
    ev.add_argument("--json", type=Path, help="also write results as JSON to this path")

    ins = sub.add_parser("inspect-ssat", help="print the tree and verdicts of a finished run")
    ins.add_argument("--run", required=True, type=Path, help="runs/<run-id> directory")
    return parser


def _load_config_file(args: argparse.Namespace) -> dict:
    candidates = []
    if getattr(args, "config", None) is not None:
        candidates.append(Path(args.config))
    if getattr(args, "task", None) is not None:
        candidates.append(Path(args.task) / CONFIG_NAME)
    candidates.append(Path.cwd() / CONFIG_NAME)
    for path in candidates:
        if path.is_file():
            with open(path, "rb") as fh:
                try:
                    data = tomllib.load(fh)
                except tomllib.TOMLDecodeError as exc:
                    raise CliError(f"bad config {path}: {exc}") from exc
            unknown = sorted(set(data) - set(_CONFIG_KEYS))
            if unknown:
                raise CliError(f"unknown config keys in {path}: {', '.join(unknown)}")
            return data
        if getattr(args, "config", None) is not None and path == Path(args.config):
            raise CliError(f"config file not found: {path}")
    return {}


def _setting(args: argparse.Namespace, file_cfg: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    file_cfg = _load_config_file(args)
    profile = _setting(args, file_cfg, "profile", "small")
    gamma = int(_setting(args, file_cfg, "gamma", 2))
    backend = _setting(args, file_cfg, "backend", "replay")
    if args.command == "replay":
        backend = "replay"
    cassette = _setting(args, file_cfg, "cassette", None)
    stub_script = _setting(args, file_cfg, "stub_script", None)
    runs_root = _setting(args, file_cfg, "runs_root", "runs")
    return RunConfig(
        theta_a=float(_setting(args, file_cfg, "theta_a", 8.0)),
        theta_s=float(_setting(args, file_cfg, "theta_s", 8.0)),
        gamma={phase: gamma for phase in GENERATION_PHASES},
        caps=caps_for_profile(profile),
        backend=backend,
        cassette_path=Path(cassette) if cassette is not None else None,
        output_dir=Path(args.out),
        runs_root=Path(runs_root),
        runner=_setting(args, file_cfg, "runner", "stub"),
        stub_script=Path(stub_script) if stub_script is not None else None,
        shim_cmd=_setting(args, file_cfg, "shim_cmd", None),
        timeout=float(_setting(args, file_cfg, "timeout", 120.0)),
    )


def _build_runner(cfg: RunConfig):
    if cfg.runner == "stub":
        if cfg.stub_script is None:
            raise CliError("the stub runner needs --stub-script (or stub_script in forge.toml)")
        if not Path(cfg.stub_script).is_file():
            raise CliError(f"stub script not found: {cfg.stub_script}")
        return StubRunner.from_file(cfg.stub_script)
    return ShimRunner(cfg.shim_cmd or "forge-shim", timeout=cfg.timeout)


def _cmd_generate(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.task)
    cfg = _resolve_run_config(args)
    runner = _build_runner(cfg)
    snapshot, trace = orchestrator.run(bundle, cfg, runner)
    outcome = trace.outcome
    print(f"task: {bundle.name}")
    print(f"outcome: {outcome}")
    print(f"files: {len(snapshot.paths())}")
    print(f"out: {cfg.output_dir}")
    return 0 if outcome == "passed" else 2


def _cmd_evaluate(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.task)
    file_cfg = _load_config_file(args)
    runner_kind = _setting(args, file_cfg, "runner", "stub")
    if runner_kind == "stub":
        stub_script = _setting(args, file_cfg, "stub_script", None)
        if stub_script is None:
            raise CliError("the stub runner needs --stub-script (or stub_script in forge.toml)")
        runner = StubRunner.from_file(Path(stub_script))
    else:
        shim_cmd = _setting(args, file_cfg, "shim_cmd", None) or "forge-shim"
        runner = ShimRunner(shim_cmd, timeout=float(_setting(args, file_cfg, "timeout", 120.0)))
    candidate = load_snapshot(args.candidate)
    # #Pass comes from the held-out unit suite, not the in-loop check tests.
    report = runner.run_tests(candidate, bundle.unit_tests, bundle.env_spec, "unit")
    profile = error_profile([report])
    print(f"task: {bundle.name}")
    print(f"pass: {report.passed}/{report.total}")
    if profile:
        rendered = ", ".join(f"{name}={count}" for name, count in profile.items())
        print(f"errors: {rendered}")
    payload: dict = {
        "task": bundle.name,
        "passed": report.passed,
        "failed": report.failed,
        "total": report.total,
        "error_profile": profile,
        "sketchbleu": None,
    }
    if bundle.reference_repo is not None:
        score = sketchbleu(candidate, bundle.reference_repo)
        print(
            f"sketchbleu: {score.total:.2f} "
            f"(bleu={score.bleu:.3f} weighted={score.bleu_weight:.3f} "
            f"struct={score.match_struc:.3f} defuse={score.match_df:.3f})"
        )
        payload["sketchbleu"] = {
            "total": score.total,
            "bleu": score.bleu,
            "bleu_weight": score.bleu_weight,
            "match_struc": score.match_struc,
            "match_df": score.match_df,
        }
    if args.json is not None:
        Path(args.json).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def _render_tree(tree) -> list[str]:
    lines: list[str] = []
    for module in tree.modules:
        lines.append(f"module: {module.name}")
        for file_node in module.files:
            lines.append(f"  file: {file_node.path}")
            for code in file_node.global_code:
                lines.append(f"    global_code: {code.name}")
            for cls in file_node.classes:
                lines.append(f"    class: {cls.name}")
                for method in cls.functions:
                    params = ", ".join(p.name for p in method.parameters)
                    lines.append(f"      function: {method.name}({params})")
            for func in file_node.functions:
                params = ", ".join(p.name for p in func.parameters)
                lines.append(f"    function: {func.name}({params})")
    return lines


def _cmd_inspect(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    ssat_path = run_dir / "ssat.json"
    if not ssat_path.is_file():
        raise CliError(f"no ssat.json under {run_dir}")
    tree = parse_ssat(ssat_path.read_text(encoding="utf-8"))
    for line in _render_tree(tree):
        print(line)
    trace_path = run_dir / "trace.jsonl"
    if trace_path.is_file():
        trace = RunTrace.load(trace_path)
        verdicts = [e for e in trace.events if e["event"] == "verdict"]
        if verdicts:
            print("verdicts:")
            for event in verdicts:
                mark = "accept" if event["accepted"] else "reject"
                print(
                    f"  {event['phase']} iter {event['iter']}: "
                    f"{event['judge']} overall {event['overall']:g} {mark}"
                )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    if args.command == "replay":
        args.backend = "replay"
    try:
        if args.command in ("generate", "replay"):
            return _cmd_generate(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        return _cmd_inspect(args)
    except (
        CliError,
        BundleError,
        GatewayError,
        TestBridgeError,
        UnparseableAgentOutput,
        SsatError,
        EmptyReference,
        PathEscape,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main(sys.argv[1:]))
