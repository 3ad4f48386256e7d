"""Command line interface: exit codes, config resolution, and report output."""

from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from forge.cli import main
from forge.workspace import RepoSnapshot, materialize, snapshot_digest

from e2e_fixtures import (
    FILL_CALC_OK,
    FILL_MAIN,
    write_bundle_dir,
    write_reference_dir,
    write_stub_script,
)

CONFIG_BASENAME = "forge.toml"

# --- argument handling ---------------------------------------------------------


def test_help_exits_clean(capsys):
    assert main(["--help"]) == 0
    assert "generate" in capsys.readouterr().out


def test_version_exits_clean(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.startswith("forge ")


def test_no_command_is_a_usage_error(capsys):
    assert main([]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_command_is_a_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "error:" in capsys.readouterr().err


def test_generate_requires_a_task(capsys):
    assert main(["generate", "--out", "somewhere"]) == 1
    assert "--task" in capsys.readouterr().err


# --- replaying recorded runs -----------------------------------------------------


def _replay_argv(scenario, tmp_path: Path, **extra: str) -> list[str]:
    argv = [
        "replay",
        "--task", str(scenario["task_dir"]),
        "--out", str(tmp_path / "out"),
        "--cassette", str(scenario["cassette"]),
        "--stub-script", str(scenario["stub_script"]),
        "--runs-root", str(tmp_path / "runs"),
    ]
    for flag, value in extra.items():
        argv += [f"--{flag.replace('_', '-')}", value]
    return argv


def test_replayed_clean_run_exits_zero(scenario_all_accept, tmp_path, capsys):
    assert main(_replay_argv(scenario_all_accept, tmp_path)) == 0
    out = capsys.readouterr().out
    assert "outcome: passed" in out
    assert "files: 2" in out
    emitted = tmp_path / "out" / "app" / "calc.py"
    assert emitted.read_text(encoding="utf-8") == FILL_CALC_OK


def test_replay_overwrites_with_identical_bytes(scenario_all_accept, tmp_path):
    argv = _replay_argv(scenario_all_accept, tmp_path)
    assert main(argv) == 0
    (run_dir,) = list((tmp_path / "runs").iterdir())
    first_trace = (run_dir / "trace.jsonl").read_bytes()
    first_out = (tmp_path / "out" / "app" / "main.py").read_bytes()

    assert main(argv) == 0
    assert (run_dir / "trace.jsonl").read_bytes() == first_trace
    assert (tmp_path / "out" / "app" / "main.py").read_bytes() == first_out


def test_replayed_exhausted_run_exits_two_but_emits(scenario_exhausted, tmp_path, capsys):
    assert main(_replay_argv(scenario_exhausted, tmp_path)) == 2
    assert "outcome: exhausted" in capsys.readouterr().out
    emitted = tmp_path / "out" / "app" / "calc.py"
    assert emitted.read_text(encoding="utf-8").startswith("# rev 2\n")


def test_replay_without_the_cassette_fails(scenario_all_accept, tmp_path, capsys):
    argv = _replay_argv(scenario_all_accept, tmp_path)
    argv[argv.index("--cassette") + 1] = str(tmp_path / "nope.json")
    assert main(argv) == 1
    assert "cassette" in capsys.readouterr().err


def test_replay_command_never_records(scenario_all_accept, tmp_path):
    # A backend choice from the config file must not override the command.
    config = tmp_path / "forge.toml"
    config.write_text('backend = "record"\n', encoding="utf-8")
    before = scenario_all_accept["cassette"].read_bytes()
    argv = _replay_argv(scenario_all_accept, tmp_path, config=str(config))
    assert main(argv) == 0
    assert scenario_all_accept["cassette"].read_bytes() == before


def test_generate_accepts_an_explicit_replay_backend(scenario_all_accept, tmp_path, capsys):
    argv = _replay_argv(scenario_all_accept, tmp_path)
    argv[0] = "generate"
    argv += ["--backend", "replay"]
    assert main(argv) == 0
    assert "outcome: passed" in capsys.readouterr().out


def test_generate_without_a_stub_script_fails(scenario_all_accept, tmp_path, capsys):
    argv = [
        "replay",
        "--task", str(scenario_all_accept["task_dir"]),
        "--out", str(tmp_path / "out"),
        "--cassette", str(scenario_all_accept["cassette"]),
        "--runs-root", str(tmp_path / "runs"),
    ]
    assert main(argv) == 1
    assert "stub" in capsys.readouterr().err


# --- config file resolution -------------------------------------------------------


def test_task_config_file_supplies_defaults(scenario_all_accept, tmp_path, capsys):
    task_dir = scenario_all_accept["task_dir"]
    config = task_dir / CONFIG_BASENAME
    config.write_text(
        f'cassette = "{scenario_all_accept["cassette"]}"\n'
        f'stub_script = "{scenario_all_accept["stub_script"]}"\n'
        f'runs_root = "{tmp_path / "runs"}"\n',
        encoding="utf-8",
    )
    try:
        argv = ["replay", "--task", str(task_dir), "--out", str(tmp_path / "out")]
        assert main(argv) == 0
        assert "outcome: passed" in capsys.readouterr().out
    finally:
        config.unlink()


def test_flags_override_the_config_file(scenario_all_accept, tmp_path, capsys):
    config = tmp_path / "forge.toml"
    config.write_text('stub_script = "/nonexistent/stub.json"\n', encoding="utf-8")
    argv = _replay_argv(scenario_all_accept, tmp_path, config=str(config))
    assert main(argv) == 0

    # Without the flag the config file's bogus path takes effect.
    bad = [a for a in argv if a != "--stub-script" and a != str(scenario_all_accept["stub_script"])]
    assert main(bad) == 1
    assert "stub script not found" in capsys.readouterr().err


def test_unknown_config_keys_are_rejected(scenario_all_accept, tmp_path, capsys):
    config = tmp_path / "forge.toml"
    config.write_text('casette = "typo.json"\n', encoding="utf-8")
    argv = _replay_argv(scenario_all_accept, tmp_path, config=str(config))
    assert main(argv) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_corrupt_config_file_is_rejected(scenario_all_accept, tmp_path, capsys):
    config = tmp_path / "forge.toml"
    config.write_text("= this is not toml", encoding="utf-8")
    argv = _replay_argv(scenario_all_accept, tmp_path, config=str(config))
    assert main(argv) == 1
    assert "bad config" in capsys.readouterr().err


def test_missing_explicit_config_is_an_error(scenario_all_accept, tmp_path, capsys):
    argv = _replay_argv(scenario_all_accept, tmp_path, config=str(tmp_path / "gone.toml"))
    assert main(argv) == 1
    assert "config file not found" in capsys.readouterr().err


# --- scoring candidate repositories ------------------------------------------------


UNIT_PASS = {
    "test_id": "test_unit.py::test_add_zero",
    "status": "pass",
}

UNIT_FAIL = {
    "test_id": "test_unit.py::test_add_zero",
    "status": "fail",
    "category": "AssertionError",
    "message": "assert add(0, 0) == 0 failed",
}


def _evaluate_setup(tmp_path: Path, *, with_reference: bool, unit_result: dict) -> list[str]:
    task_dir = write_bundle_dir(tmp_path)
    if with_reference:
        write_reference_dir(task_dir)
    candidate = RepoSnapshot({"app/calc.py": FILL_CALC_OK, "app/main.py": FILL_MAIN})
    cand_dir = tmp_path / "candidate"
    materialize(candidate, cand_dir)
    report = {
        "total": 1,
        "passed": 1 if unit_result["status"] == "pass" else 0,
        "failed": 0 if unit_result["status"] == "pass" else 1,
        "results": [unit_result],
        "raw_log": "unit sweep",
    }
    stub = write_stub_script(
        tmp_path / "stub.json",
        [{"digest": snapshot_digest(candidate), "mode": "unit", "report": report}],
    )
    return [
        "evaluate",
        "--task", str(task_dir),
        "--candidate", str(cand_dir),
        "--stub-script", str(stub),
    ]


def test_evaluate_scores_an_identical_candidate_at_one_hundred(tmp_path, capsys):
    argv = _evaluate_setup(tmp_path, with_reference=True, unit_result=UNIT_PASS)
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "pass: 1/1" in out
    match = re.search(r"sketchbleu: ([0-9.]+)", out)
    assert match is not None
    assert abs(float(match.group(1)) - 100.0) <= 0.1
    assert "errors:" not in out


def test_evaluate_writes_the_json_payload(tmp_path, capsys):
    json_path = tmp_path / "metrics.json"
    argv = _evaluate_setup(tmp_path, with_reference=True, unit_result=UNIT_PASS)
    argv += ["--json", str(json_path)]
    assert main(argv) == 0
    payload = json.loads(json_path.read_text(encoding="utf-8"))
    assert payload["task"] == "tinycalc"
    assert (payload["passed"], payload["total"]) == (1, 1)
    assert payload["error_profile"] == {}
    assert abs(payload["sketchbleu"]["total"] - 100.0) <= 0.1
    for component in ("bleu", "bleu_weight", "match_struc", "match_df"):
        assert abs(payload["sketchbleu"][component] - 1.0) <= 0.01
    capsys.readouterr()


def test_evaluate_without_a_reference_skips_similarity(tmp_path, capsys):
    json_path = tmp_path / "metrics.json"
    argv = _evaluate_setup(tmp_path, with_reference=False, unit_result=UNIT_PASS)
    argv += ["--json", str(json_path)]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "pass: 1/1" in out
    assert "sketchbleu" not in out
    assert json.loads(json_path.read_text(encoding="utf-8"))["sketchbleu"] is None


def test_evaluate_surfaces_failure_categories(tmp_path, capsys):
    argv = _evaluate_setup(tmp_path, with_reference=False, unit_result=UNIT_FAIL)
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "pass: 0/1" in out
    assert "errors: AssertionError=1" in out


def test_evaluate_rejects_a_missing_candidate(tmp_path, capsys):
    argv = _evaluate_setup(tmp_path, with_reference=False, unit_result=UNIT_PASS)
    argv[argv.index("--candidate") + 1] = str(tmp_path / "void")
    assert main(argv) == 1
    assert "error:" in capsys.readouterr().err


# --- inspecting finished runs -------------------------------------------------------


def _recorded_run_dir(scenario) -> Path:
    root = scenario["task_dir"].parent
    (run_dir,) = list((root / "runs-record").iterdir())
    return run_dir


def test_inspect_renders_each_file_once(scenario_all_accept, capsys):
    run_dir = _recorded_run_dir(scenario_all_accept)
    assert main(["inspect-ssat", "--run", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert out.count("file: app/calc.py") == 1
    assert out.count("file: app/main.py") == 1
    assert "module: app" in out
    assert "function: add(a, b)" in out


def test_inspect_lists_the_judge_history(scenario_arch_rejected, capsys):
    run_dir = _recorded_run_dir(scenario_arch_rejected)
    assert main(["inspect-ssat", "--run", str(run_dir)]) == 0
    out = capsys.readouterr().out
    judge_lines = [line for line in out.splitlines() if "judge_a" in line]
    assert len(judge_lines) == 3
    assert sum("reject" in line for line in judge_lines) == 2
    assert sum("accept" in line for line in judge_lines) == 1
    assert any("judge_s" in line and "accept" in line for line in out.splitlines())


def test_inspect_needs_a_run_directory(tmp_path, capsys):
    assert main(["inspect-ssat", "--run", str(tmp_path / "missing-run")]) == 1
    assert "ssat.json" in capsys.readouterr().err
