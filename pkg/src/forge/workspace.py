"""Immutable repo snapshots, import graphs and deterministic file ordering."""

from __future__ import annotations

import difflib
import hashlib
import heapq
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping


class PathEscape(ValueError):
    """A path is absolute, parent-escaping or otherwise not a clean relpath."""

    def __init__(self, path: str) -> None:
        super().__init__(f"path escapes the workspace: {path!r}")
        self.path = path


def validate_relpath(path: str) -> str:
    if not isinstance(path, str) or not path:
        raise PathEscape(path)
    if path.startswith("/") or "\\" in path or "\x00" in path or ":" in path.split("/")[0][:2]:
        raise PathEscape(path)
    if any(seg in ("", ".", "..") for seg in path.split("/")):
        raise PathEscape(path)
    return path


@dataclass(frozen=True)
class RepoSnapshot:
    """Frozen mapping of relative file paths to contents.

    created_at is a phase+iteration tag like "skeleton/iter-1"; it does not
    participate in the content digest.
    """

    files: dict[str, str]
    created_at: str = ""

    def __post_init__(self) -> None:
        checked = {}
        for path, content in self.files.items():
            validate_relpath(path)
            if not isinstance(content, str):
                raise TypeError(f"content of {path!r} must be text")
            checked[path] = content
        object.__setattr__(self, "files", checked)

    def paths(self) -> list[str]:
        return sorted(self.files)

    def get(self, path: str) -> str | None:
        return self.files.get(path)

    def __contains__(self, path: str) -> bool:
        return path in self.files


def snapshot_digest(repo: RepoSnapshot) -> str:
    """Content digest over sorted (path, content) pairs; tag excluded."""
    payload = json.dumps(
        [[p, repo.files[p]] for p in repo.paths()], ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def apply_patch(repo: RepoSnapshot, files: Mapping[str, str], created_at: str | None = None) -> RepoSnapshot:
    """New snapshot with files added or replaced; paths validated."""
    merged = dict(repo.files)
    for path, content in files.items():
        merged[validate_relpath(path)] = content
    return RepoSnapshot(files=merged, created_at=repo.created_at if created_at is None else created_at)


def materialize(repo: RepoSnapshot, dest: Path) -> None:
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for path in repo.paths():
        target = dest / path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(repo.files[path], encoding="utf-8")


def load_snapshot(root: Path, created_at: str = "") -> RepoSnapshot:
    """Read a directory tree into a snapshot. Binary files are skipped."""
    root = Path(root)
    files: dict[str, str] = {}
    for item in sorted(root.rglob("*")):
        if not item.is_file():
            continue
        rel = item.relative_to(root).as_posix()
        if any(seg in ("__pycache__", ".git") for seg in rel.split("/")):
            continue
        try:
            files[rel] = item.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            continue
    return RepoSnapshot(files=files, created_at=created_at)


# --- import graph -------------------------------------------------------------

@dataclass(frozen=True)
class ImportGraph:
    """Internal import edges: (importer, imported), both snapshot paths.

    unresolved is the diagnostics side channel: (importer, dotted name) pairs
    that matched an import statement but resolve to nothing in the snapshot.
    """

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    unresolved: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        for importer, imported in self.edges:
            if importer == imported:
                raise ValueError(f"self edge on {importer!r}")
            if importer not in node_set or imported not in node_set:
                raise ValueError(f"edge references unknown node: {importer!r} -> {imported!r}")


_IMPORT_RE = re.compile(r"^\s*import\s+(.+)$")
_FROM_RE = re.compile(r"^\s*from\s+([.\w]+)\s+import\s+(.+)$")


def _strip_comment(line: str) -> str:
    # Naive but line-based on purpose: a '#' inside a string literal on an
    # import line is not worth handling.
    idx = line.find("#")
    return line if idx < 0 else line[:idx]


def _logical_import_lines(text: str) -> list[str]:
    """Join parenthesized from-import continuations into single lines."""
    out: list[str] = []
    pending: str | None = None
    for raw in text.splitlines():
        line = _strip_comment(raw)
        if pending is not None:
            pending += " " + line.strip()
            if ")" in line:
                out.append(pending)
                pending = None
            continue
        stripped = line.strip()
        if (stripped.startswith("from ") or stripped.startswith("import ")) and "(" in line and ")" not in line:
            pending = line.rstrip()
            continue
        out.append(line)
    if pending is not None:
        out.append(pending)
    return out


def _module_candidates(dotted: str) -> list[str]:
    base = dotted.replace(".", "/")
    return [f"{base}.py", f"{base}/__init__.py"]


def _resolve(dotted: str, paths: set[str]) -> str | None:
    for candidate in _module_candidates(dotted):
        if candidate in paths:
            return candidate
    return None


def _importer_package(importer: str) -> list[str]:
    return importer.split("/")[:-1]


def extract_imports(repo: RepoSnapshot) -> ImportGraph:
    """Line-based import extraction over .py files, internal edges only."""
    paths = set(repo.files)
    edges: set[tuple[str, str]] = set()
    unresolved: list[tuple[str, str]] = []

    def add_edge(importer: str, target: str | None, dotted: str) -> bool:
        if target is None:
            return False
        if target != importer:
            edges.add((importer, target))
        return True

    for importer in repo.paths():
        if not importer.endswith(".py"):
            continue
        for line in _logical_import_lines(repo.files[importer]):
            m = _FROM_RE.match(line)
            if m:
                module, names = m.group(1), m.group(2)
                level = len(module) - len(module.lstrip("."))
                remainder = module[level:]
                if level:
                    pkg = _importer_package(importer)
                    if level - 1 > len(pkg):
                        unresolved.append((importer, module))
                        continue
                    base_parts = pkg[: len(pkg) - (level - 1)]
                    prefix = ".".join(base_parts)
                    if remainder:
                        dotted = f"{prefix}.{remainder}" if prefix else remainder
                    else:
                        dotted = prefix
                else:
                    dotted = remainder
                names = names.replace("(", " ").replace(")", " ")
                name_list = [n.strip().split(" as ")[0].strip() for n in names.split(",")]
                name_list = [n for n in name_list if n and n != "*"]
                hit_all = True
                for name in name_list:
                    sub = f"{dotted}.{name}" if dotted else name
                    if not add_edge(importer, _resolve(sub, paths), sub):
                        hit_all = False
                if not name_list or not hit_all:
                    # Fall back to the module itself (plain-name imports, or
                    # a star import).
                    target = _resolve(dotted, paths) if dotted else None
                    if not add_edge(importer, target, module):
                        unresolved.append((importer, module))
                continue
            m = _IMPORT_RE.match(line)
            if m:
                for chunk in m.group(1).split(","):
                    dotted = chunk.strip().split(" as ")[0].strip()
                    if not dotted or not re.fullmatch(r"[\w.]+", dotted):
                        continue
                    if not add_edge(importer, _resolve(dotted, paths), dotted):
                        unresolved.append((importer, dotted))

    return ImportGraph(
        nodes=tuple(repo.paths()),
        edges=tuple(sorted(edges)),
        unresolved=tuple(unresolved),
    )


# --- generation order ---------------------------------------------------------

def _strongly_connected(nodes: list[str], adjacency: dict[str, list[str]]) -> list[list[str]]:
    """Iterative Tarjan; components returned in discovery order."""
    index: dict[str, int] = {}
    lowlink: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    components: list[list[str]] = []
    counter = 0

    for root in nodes:
        if root in index:
            continue
        work: list[tuple[str, int]] = [(root, 0)]
        while work:
            node, child_idx = work.pop()
            if child_idx == 0:
                index[node] = lowlink[node] = counter
                counter += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            children = adjacency.get(node, [])
            while child_idx < len(children):
                child = children[child_idx]
                child_idx += 1
                if child not in index:
                    work.append((node, child_idx))
                    work.append((child, 0))
                    advanced = True
                    break
                if child in on_stack:
                    lowlink[node] = min(lowlink[node], index[child])
            if advanced:
                continue
            if lowlink[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                components.append(component)
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
    return components


def generation_order(graph: ImportGraph) -> list[str]:
    """Topological file order: imported files first.

    Cycles are collapsed into components; components are ordered
    topologically with ties broken by their lexicographically smallest
    member path, and files within a component come out lexicographically.
    """
    nodes = sorted(graph.nodes)
    adjacency: dict[str, list[str]] = {n: [] for n in nodes}
    for importer, imported in graph.edges:
        adjacency[importer].append(imported)
    for targets in adjacency.values():
        targets.sort()

    components = _strongly_connected(nodes, adjacency)
    comp_of: dict[str, int] = {}
    for i, comp in enumerate(components):
        for node in comp:
            comp_of[node] = i

    # Component c depends on component d when some member imports into d;
    # dependencies must be emitted first.
    depends: dict[int, set[int]] = {i: set() for i in range(len(components))}
    dependents: dict[int, set[int]] = {i: set() for i in range(len(components))}
    for importer, imported in graph.edges:
        c, d = comp_of[importer], comp_of[imported]
        if c != d:
            depends[c].add(d)
            dependents[d].add(c)

    comp_key = {i: min(comp) for i, comp in enumerate(components)}
    pending = {i: len(depends[i]) for i in range(len(components))}
    ready = [(comp_key[i], i) for i, n in pending.items() if n == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        _, comp_id = heapq.heappop(ready)
        order.extend(sorted(components[comp_id]))
        for dependent in dependents[comp_id]:
            pending[dependent] -= 1
            if pending[dependent] == 0:
                heapq.heappush(ready, (comp_key[dependent], dependent))
    return order


# --- code diff ----------------------------------------------------------------

def diff_code(old: RepoSnapshot, new: RepoSnapshot) -> str:
    """Unified diff across all changed files, lexicographic file order.

    Files are split on newlines (keeping a trailing empty element for a
    trailing newline) so that applying the hunks reproduces content exactly.
    """
    chunks: list[str] = []
    for path in sorted(set(old.files) | set(new.files)):
        before = old.files.get(path)
        after = new.files.get(path)
        if before == after:
            continue
        from_file = f"a/{path}" if before is not None else "/dev/null"
        to_file = f"b/{path}" if after is not None else "/dev/null"
        before_lines = before.split("\n") if before is not None else []
        after_lines = after.split("\n") if after is not None else []
        lines = difflib.unified_diff(
            before_lines, after_lines, fromfile=from_file, tofile=to_file, lineterm=""
        )
        chunks.extend(lines)
    return "\n".join(chunks)


def summarize_code_diff(old: RepoSnapshot, new: RepoSnapshot, feedback: str) -> str:
    """Bounded deterministic summary used for memory retrieval."""
    touched = sorted(
        path
        for path in set(old.files) | set(new.files)
        if old.files.get(path) != new.files.get(path)
    )
    if not touched:
        head = "no file change"
    else:
        shown = ", ".join(touched[:20])
        tail = f", and {len(touched) - 20} more" if len(touched) > 20 else ""
        head = f"{len(touched)} file(s) changed: {shown}{tail}"
    concern = " ".join(feedback.split())
    if len(concern) > 240:
        concern = concern[:240] + "..."
    return f"{head}\naddresses: {concern}"


# --- syntax gate ----------------------------------------------------------------

def syntax_gate(repo: RepoSnapshot, runner) -> list[tuple[str, str]]:
    """Run the runner in syntax mode; return (path, message) per bad file."""
    report = runner.run_tests(repo, frozenset(), None, "syntax")
    return [(r.test_id, r.message) for r in report.results if r.status != "pass"]
