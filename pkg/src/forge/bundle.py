"""Task bundle loading: requirement documents, curated tests, environment spec."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .workspace import RepoSnapshot, load_snapshot


class BundleError(ValueError):
    pass


class MissingDocument(BundleError):
    def __init__(self, what: str) -> None:
        super().__init__(f"bundle is missing {what}")
        self.what = what


class OverlappingTests(BundleError):
    def __init__(self, identifier: str) -> None:
        super().__init__(f"check and unit test sets overlap on {identifier!r}")
        self.identifier = identifier


class MalformedLayout(BundleError):
    pass


_TEST_DEF_RE = re.compile(r"^\s*def\s+(test_\w+)\s*\(", re.MULTILINE)


@dataclass(frozen=True)
class TestFileEntry:
    """One test file; path is relative to its own directory (checks/ or
    unittests/) so the disjointness rule compares like with like."""

    __test__ = False  # not a test case despite the name

    path: str
    content: str

    def test_ids(self) -> list[str]:
        return [f"{self.path}::{name}" for name in _TEST_DEF_RE.findall(self.content)]


@dataclass(frozen=True)
class EnvSpec:
    python: str | None = None
    dependencies: tuple[str, ...] = ()
    setup_commands: tuple[str, ...] = ()


@dataclass(frozen=True)
class TaskBundle:
    name: str
    prd: str
    architecture_doc: str
    uml_diagrams: tuple[str, ...]
    check_tests: tuple[TestFileEntry, ...]
    unit_tests: tuple[TestFileEntry, ...]
    env_spec: EnvSpec
    reference_repo: RepoSnapshot | None = None
    reference_loc: int | None = None

    def __post_init__(self) -> None:
        # A present-but-blank requirement document is as useless as a missing one.
        if not self.prd.strip():
            raise MissingDocument("prd.md")
        if not self.architecture_doc.strip():
            raise MissingDocument("architecture.md")
        if not self.uml_diagrams:
            raise MissingDocument("uml/*.mmd")
        check_paths = {e.path for e in self.check_tests}
        unit_paths = {e.path for e in self.unit_tests}
        clash = check_paths & unit_paths
        if clash:
            raise OverlappingTests(sorted(clash)[0])
        check_ids = {i for e in self.check_tests for i in e.test_ids()}
        unit_ids = {i for e in self.unit_tests for i in e.test_ids()}
        id_clash = check_ids & unit_ids
        if id_clash:
            raise OverlappingTests(sorted(id_clash)[0])


def count_loc(text: str) -> int:
    """Non-blank, non-comment lines."""
    count = 0
    for line in text.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            count += 1
    return count


def _repo_loc(repo: RepoSnapshot) -> int:
    return sum(count_loc(content) for path, content in repo.files.items() if path.endswith(".py"))


def _read_doc(root: Path, name: str) -> str:
    path = root / name
    if not path.is_file():
        raise MissingDocument(name)
    return path.read_text(encoding="utf-8")


def _read_test_dir(root: Path, dirname: str) -> tuple[TestFileEntry, ...]:
    directory = root / dirname
    if not directory.is_dir():
        raise MalformedLayout(f"{dirname}/ directory missing")
    entries = []
    for item in sorted(directory.rglob("*.py")):
        if not item.is_file():
            continue
        rel = item.relative_to(directory).as_posix()
        entries.append(TestFileEntry(path=rel, content=item.read_text(encoding="utf-8")))
    return tuple(entries)


def _parse_env(raw: str) -> EnvSpec:
    try:
        data = tomllib.loads(raw)
    except tomllib.TOMLDecodeError as exc:
        raise MalformedLayout(f"env.toml: {exc}") from exc
    python = data.get("python")
    if python is not None and not isinstance(python, str):
        raise MalformedLayout("env.toml: 'python' must be a string")
    deps = data.get("dependencies", [])
    setup = data.get("setup", [])
    for key, value in (("dependencies", deps), ("setup", setup)):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise MalformedLayout(f"env.toml: {key!r} must be a list of strings")
    return EnvSpec(python=python, dependencies=tuple(deps), setup_commands=tuple(setup))


def load_bundle(task_dir: Path) -> TaskBundle:
    """Load a bundle directory; a pure function of the directory's bytes."""
    root = Path(task_dir)
    if not root.is_dir():
        raise MalformedLayout(f"not a directory: {root}")

    prd = _read_doc(root, "prd.md")
    architecture = _read_doc(root, "architecture.md")

    uml_dir = root / "uml"
    diagrams: list[str] = []
    if uml_dir.is_dir():
        for item in sorted(uml_dir.glob("*.mmd")):
            diagrams.append(item.read_text(encoding="utf-8"))
    if not diagrams:
        raise MissingDocument("uml/*.mmd")

    checks = _read_test_dir(root, "checks")
    units = _read_test_dir(root, "unittests")

    env_path = root / "env.toml"
    if not env_path.is_file():
        raise MissingDocument("env.toml")
    env = _parse_env(env_path.read_text(encoding="utf-8"))

    name = root.name
    reference_loc: int | None = None
    meta_path = root / "meta.toml"
    if meta_path.is_file():
        try:
            meta = tomllib.loads(meta_path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise MalformedLayout(f"meta.toml: {exc}") from exc
        if "name" in meta:
            if not isinstance(meta["name"], str) or not meta["name"]:
                raise MalformedLayout("meta.toml: 'name' must be a nonempty string")
            name = meta["name"]
        if "reference_loc" in meta:
            if not isinstance(meta["reference_loc"], int) or meta["reference_loc"] < 0:
                raise MalformedLayout("meta.toml: 'reference_loc' must be a nonnegative integer")
            reference_loc = meta["reference_loc"]

    reference: RepoSnapshot | None = None
    ref_dir = root / "reference"
    if ref_dir.is_dir():
        reference = load_snapshot(ref_dir, created_at="reference")
        if reference_loc is None:
            reference_loc = _repo_loc(reference)

    return TaskBundle(
        name=name,
        prd=prd,
        architecture_doc=architecture,
        uml_diagrams=tuple(diagrams),
        check_tests=checks,
        unit_tests=units,
        env_spec=env,
        reference_repo=reference,
        reference_loc=reference_loc,
    )


def bundle_digest(bundle: TaskBundle) -> str:
    """Digest over generation-relevant content with sorted path order.

    The reference repo and reference_loc are evaluation-only and excluded, so
    adding a reference later does not invalidate recorded cassettes.
    """
    payload = {
        "name": bundle.name,
        "prd": bundle.prd,
        "architecture": bundle.architecture_doc,
        "uml": sorted(bundle.uml_diagrams),
        "checks": sorted((e.path, e.content) for e in bundle.check_tests),
        "unittests": sorted((e.path, e.content) for e in bundle.unit_tests),
        "env": {
            "python": bundle.env_spec.python,
            "dependencies": list(bundle.env_spec.dependencies),
            "setup": list(bundle.env_spec.setup_commands),
        },
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
