"""Semantic software architecture tree: types, canonical JSON, structured diff.

The tree is the contract between the architecture phase and everything
downstream: modules contain files, files contain global code, classes and
functions, and every node carries a natural-language description instead of
code. Serialization is canonical (fixed key order, two-space indent) so that
equal trees produce byte-equal documents.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field


class SsatError(ValueError):
    """Base class for tree parsing and validation failures."""


class SsatSyntaxError(SsatError):
    """The document is not valid JSON."""


class SchemaError(SsatError):
    """JSON shape is wrong: missing/unknown field, bad kind tag, bad type."""


class InvariantError(SsatError):
    """Structurally valid JSON that violates a tree invariant."""


_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_PARAM_RE = re.compile(r"^\*{0,2}[A-Za-z_][A-Za-z0-9_]*$")


def _require_ident(value: str, what: str) -> str:
    if not isinstance(value, str) or not _IDENT_RE.match(value):
        raise InvariantError(f"{what} must be an identifier, got {value!r}")
    return value


def _require_text(value: str, what: str) -> str:
    if not isinstance(value, str):
        raise InvariantError(f"{what} must be a string, got {type(value).__name__}")
    return value


def validate_tree_path(path: str) -> str:
    """Reject absolute, parent-escaping, or non-normalized file paths."""
    if not isinstance(path, str) or not path:
        raise InvariantError("file path must be a nonempty string")
    if path.startswith("/") or "\\" in path or "\x00" in path:
        raise InvariantError(f"file path not relative: {path!r}")
    segments = path.split("/")
    if any(seg in ("", ".", "..") for seg in segments):
        raise InvariantError(f"file path not normalized: {path!r}")
    return path


def _unique(names: list[str], what: str) -> None:
    seen: set[str] = set()
    for name in names:
        if name in seen:
            raise InvariantError(f"duplicate {what}: {name!r}")
        seen.add(name)


@dataclass(frozen=True)
class Parameter:
    name: str
    type: str
    description: str

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not _PARAM_RE.match(self.name):
            raise InvariantError(f"parameter name invalid: {self.name!r}")
        _require_text(self.type, "parameter type")
        _require_text(self.description, "parameter description")


@dataclass(frozen=True)
class FunctionNode:
    name: str
    description: str
    parameters: tuple[Parameter, ...] = ()

    def __post_init__(self) -> None:
        _require_ident(self.name, "function name")
        _require_text(self.description, "function description")
        object.__setattr__(self, "parameters", tuple(self.parameters))
        _unique([p.name for p in self.parameters], "parameter name")


@dataclass(frozen=True)
class GlobalCodeNode:
    name: str
    description: str

    def __post_init__(self) -> None:
        _require_ident(self.name, "global code name")
        if not isinstance(self.description, str) or not self.description:
            # Global code has no enclosing def; the description is all we have.
            raise InvariantError("global code description must be nonempty")


@dataclass(frozen=True)
class ClassNode:
    name: str
    description: str
    functions: tuple[FunctionNode, ...] = ()

    def __post_init__(self) -> None:
        _require_ident(self.name, "class name")
        _require_text(self.description, "class description")
        object.__setattr__(self, "functions", tuple(self.functions))
        _unique([f.name for f in self.functions], "method name")


@dataclass(frozen=True)
class FileNode:
    name: str
    description: str
    path: str
    global_code: tuple[GlobalCodeNode, ...] = ()
    classes: tuple[ClassNode, ...] = ()
    functions: tuple[FunctionNode, ...] = ()

    def __post_init__(self) -> None:
        _require_text(self.name, "file name")
        _require_text(self.description, "file description")
        validate_tree_path(self.path)
        if self.path.split("/")[-1] != self.name:
            raise InvariantError(
                f"file name {self.name!r} does not match path {self.path!r}"
            )
        object.__setattr__(self, "global_code", tuple(self.global_code))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "functions", tuple(self.functions))
        if not (self.global_code or self.classes or self.functions):
            raise InvariantError(f"file {self.path!r} declares no contents")
        _unique([g.name for g in self.global_code], "global code name")
        _unique([c.name for c in self.classes], "class name")
        _unique([f.name for f in self.functions], "function name")


@dataclass(frozen=True)
class ModuleNode:
    name: str
    description: str
    files: tuple[FileNode, ...] = ()

    def __post_init__(self) -> None:
        _require_ident(self.name, "module name")
        _require_text(self.description, "module description")
        object.__setattr__(self, "files", tuple(self.files))
        if not self.files:
            raise InvariantError(f"module {self.name!r} contains no files")
        _unique([f.name for f in self.files], "file name in module")


@dataclass(frozen=True)
class SsatTree:
    modules: tuple[ModuleNode, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "modules", tuple(self.modules))
        if not self.modules:
            raise InvariantError("tree contains no modules")
        _unique([m.name for m in self.modules], "module name")
        _unique([f.path for m in self.modules for f in m.files], "file path")

    def file_paths(self) -> list[str]:
        """All file paths in tree order (module order, then file order)."""
        return [f.path for m in self.modules for f in m.files]

    def files(self) -> list[FileNode]:
        return [f for m in self.modules for f in m.files]


# --- canonical serialization -------------------------------------------------

def _parameter_payload(p: Parameter) -> dict:
    return {"name": p.name, "type": p.type, "description": p.description}


def _function_payload(f: FunctionNode) -> dict:
    return {
        "kind": "function",
        "name": f.name,
        "description": f.description,
        "parameters": [_parameter_payload(p) for p in f.parameters],
    }


def _global_payload(g: GlobalCodeNode) -> dict:
    return {"kind": "global_code", "name": g.name, "description": g.description}


def _class_payload(c: ClassNode) -> dict:
    return {
        "kind": "class",
        "name": c.name,
        "description": c.description,
        "functions": [_function_payload(f) for f in c.functions],
    }


def _file_payload(f: FileNode) -> dict:
    return {
        "kind": "file",
        "name": f.name,
        "description": f.description,
        "path": f.path,
        "global_code": [_global_payload(g) for g in f.global_code],
        "classes": [_class_payload(c) for c in f.classes],
        "functions": [_function_payload(fn) for fn in f.functions],
    }


def _module_payload(m: ModuleNode) -> dict:
    return {
        "kind": "module",
        "name": m.name,
        "description": m.description,
        "files": [_file_payload(f) for f in m.files],
    }


def tree_payload(tree: SsatTree) -> dict:
    return {"modules": [_module_payload(m) for m in tree.modules]}


def file_payload(node: FileNode) -> dict:
    """Serialization payload for one file subtree."""
    return _file_payload(node)


def serialize_ssat(tree: SsatTree) -> str:
    """Canonical form: schema key order, two-space indent, trailing newline."""
    return json.dumps(tree_payload(tree), indent=2, ensure_ascii=False) + "\n"


# --- parsing -----------------------------------------------------------------

def _check_obj(obj: object, kind: str, fields: tuple[str, ...]) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(f"{kind} node must be an object, got {type(obj).__name__}")
    expected = set(fields)
    if kind != "parameter":
        expected.add("kind")
        if obj.get("kind") != kind:
            raise SchemaError(f"expected kind {kind!r}, got {obj.get('kind')!r}")
    for name in fields:
        if name not in obj:
            raise SchemaError(f"{kind} node missing field {name!r}")
    unknown = set(obj) - expected
    if unknown:
        raise SchemaError(f"{kind} node has unknown fields: {sorted(unknown)}")
    return obj


def _str_field(obj: dict, kind: str, name: str) -> str:
    value = obj[name]
    if not isinstance(value, str):
        raise SchemaError(f"{kind}.{name} must be a string")
    return value


def _list_field(obj: dict, kind: str, name: str) -> list:
    value = obj[name]
    if not isinstance(value, list):
        raise SchemaError(f"{kind}.{name} must be a list")
    return value


def _parse_parameter(obj: object) -> Parameter:
    rec = _check_obj(obj, "parameter", ("name", "type", "description"))
    return Parameter(
        name=_str_field(rec, "parameter", "name"),
        type=_str_field(rec, "parameter", "type"),
        description=_str_field(rec, "parameter", "description"),
    )


def _parse_function(obj: object) -> FunctionNode:
    rec = _check_obj(obj, "function", ("name", "description", "parameters"))
    params = [_parse_parameter(p) for p in _list_field(rec, "function", "parameters")]
    return FunctionNode(
        name=_str_field(rec, "function", "name"),
        description=_str_field(rec, "function", "description"),
        parameters=tuple(params),
    )


def _parse_global(obj: object) -> GlobalCodeNode:
    rec = _check_obj(obj, "global_code", ("name", "description"))
    return GlobalCodeNode(
        name=_str_field(rec, "global_code", "name"),
        description=_str_field(rec, "global_code", "description"),
    )


def _parse_class(obj: object) -> ClassNode:
    rec = _check_obj(obj, "class", ("name", "description", "functions"))
    funcs = [_parse_function(f) for f in _list_field(rec, "class", "functions")]
    return ClassNode(
        name=_str_field(rec, "class", "name"),
        description=_str_field(rec, "class", "description"),
        functions=tuple(funcs),
    )


def _parse_file(obj: object) -> FileNode:
    rec = _check_obj(
        obj,
        "file",
        ("name", "description", "path", "global_code", "classes", "functions"),
    )
    return FileNode(
        name=_str_field(rec, "file", "name"),
        description=_str_field(rec, "file", "description"),
        path=_str_field(rec, "file", "path"),
        global_code=tuple(_parse_global(g) for g in _list_field(rec, "file", "global_code")),
        classes=tuple(_parse_class(c) for c in _list_field(rec, "file", "classes")),
        functions=tuple(_parse_function(f) for f in _list_field(rec, "file", "functions")),
    )


def _parse_module(obj: object) -> ModuleNode:
    rec = _check_obj(obj, "module", ("name", "description", "files"))
    files = [_parse_file(f) for f in _list_field(rec, "module", "files")]
    return ModuleNode(
        name=_str_field(rec, "module", "name"),
        description=_str_field(rec, "module", "description"),
        files=tuple(files),
    )


def parse_ssat(doc: str) -> SsatTree:
    """Parse a JSON document into a validated tree.

    Raises SsatSyntaxError for invalid JSON, SchemaError for shape problems
    and InvariantError for semantic violations. Validation is total: any
    outcome is a tree or one of those three.
    """
    try:
        payload = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise SsatSyntaxError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(payload, dict):
        raise SchemaError("top level must be an object")
    if "modules" not in payload:
        raise SchemaError("top level missing field 'modules'")
    unknown = set(payload) - {"modules"}
    if unknown:
        raise SchemaError(f"top level has unknown fields: {sorted(unknown)}")
    if not isinstance(payload["modules"], list):
        raise SchemaError("'modules' must be a list")
    modules = tuple(_parse_module(m) for m in payload["modules"])
    return SsatTree(modules=modules)


# --- structured diff ---------------------------------------------------------

# A node path is a tuple of (kind, key) pairs from the root; keys are names
# except for files, which are keyed by path (unique tree-wide). Tuples rather
# than joined strings because file keys contain slashes.
NodePath = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class DiffRecord:
    op: str  # added | removed | changed | moved
    path: NodePath
    index: int | None = None  # added/moved: absolute position in the new list
    node: dict | None = None  # added/removed payload
    before: dict | None = None  # changed
    after: dict | None = None  # changed

    @property
    def path_str(self) -> str:
        return "/".join(f"{kind}:{key}" for kind, key in self.path)

    def to_json(self) -> dict:
        out: dict = {"op": self.op, "path": [list(seg) for seg in self.path]}
        if self.index is not None:
            out["index"] = self.index
        if self.node is not None:
            out["node"] = self.node
        if self.before is not None:
            out["before"] = self.before
            out["after"] = self.after
        return out


_PAYLOAD = {
    "module": _module_payload,
    "file": _file_payload,
    "class": _class_payload,
    "function": _function_payload,
    "global_code": _global_payload,
}

_LEAF_KINDS = frozenset({"function", "global_code"})


def _node_key(kind: str, node) -> str:
    return node.path if kind == "file" else node.name


def _own_attrs(kind: str, node) -> dict:
    payload = _PAYLOAD[kind](node)
    if kind == "module":
        payload.pop("files")
    elif kind == "file":
        for child in ("global_code", "classes", "functions"):
            payload.pop(child)
    elif kind == "class":
        payload.pop("functions")
    return payload


def _child_lists(kind: str, node) -> list[tuple[str, list]]:
    if kind == "module":
        return [("file", list(node.files))]
    if kind == "file":
        return [
            ("global_code", list(node.global_code)),
            ("class", list(node.classes)),
            ("function", list(node.functions)),
        ]
    if kind == "class":
        return [("function", list(node.functions))]
    return []


def _diff_children(parent: NodePath, kind: str, old_list: list, new_list: list) -> list[DiffRecord]:
    records: list[DiffRecord] = []
    old_keys = [_node_key(kind, n) for n in old_list]
    new_keys = [_node_key(kind, n) for n in new_list]
    old_map = dict(zip(old_keys, old_list))
    new_map = dict(zip(new_keys, new_list))

    matched = [k for k in old_keys if k in new_map]
    removed = [k for k in old_keys if k not in new_map]
    added = [k for k in new_keys if k not in old_map]

    # Leftover removed+added nodes are paired positionally so that a rename
    # surfaces as a single changed record instead of a remove/add pair.
    pairs = list(zip(removed, added))
    paired_old = {o for o, _ in pairs}
    paired_new = {a for _, a in pairs}

    for key in removed:
        if key not in paired_old:
            records.append(
                DiffRecord("removed", parent + ((kind, key),), node=_PAYLOAD[kind](old_map[key]))
            )
    for key in added:
        if key not in paired_new:
            records.append(
                DiffRecord(
                    "added",
                    parent + ((kind, key),),
                    index=new_keys.index(key),
                    node=_PAYLOAD[kind](new_map[key]),
                )
            )
    for old_key, new_key in pairs:
        records.append(
            DiffRecord(
                "changed",
                parent + ((kind, old_key),),
                before=_PAYLOAD[kind](old_map[old_key]),
                after=_PAYLOAD[kind](new_map[new_key]),
            )
        )

    for key in matched:
        old_node, new_node = old_map[key], new_map[key]
        if old_node == new_node:
            continue
        path = parent + ((kind, key),)
        if kind in _LEAF_KINDS or _own_attrs(kind, old_node) != _own_attrs(kind, new_node):
            # Leaf change, or a container whose own attributes changed: one
            # coarse record with full payloads, no recursion underneath.
            records.append(
                DiffRecord(
                    "changed",
                    path,
                    before=_PAYLOAD[kind](old_node),
                    after=_PAYLOAD[kind](new_node),
                )
            )
        else:
            old_children = _child_lists(kind, old_node)
            new_children = _child_lists(kind, new_node)
            for (child_kind, olds), (_, news) in zip(old_children, new_children):
                records.extend(_diff_children(path, child_kind, olds, news))

    # Reorders among surviving siblings are invisible to add/remove/change;
    # emit absolute target indices for every survivor when the order shifts.
    rename = dict(pairs)
    survivors_old = [rename.get(k, k) for k in old_keys if k in new_map or k in paired_old]
    survivors_new = [k for k in new_keys if k in old_map or k in paired_new]
    if survivors_old != survivors_new:
        for key in survivors_new:
            records.append(
                DiffRecord("moved", parent + ((kind, key),), index=new_keys.index(key))
            )
    return records


def diff_ssat(old: SsatTree, new: SsatTree) -> list[DiffRecord]:
    """Structured diff; empty iff the trees are equal."""
    return _diff_children((), "module", list(old.modules), list(new.modules))


def render_diff(diff: list[DiffRecord]) -> str:
    """One line per record, for memory storage and prompt inclusion."""
    if not diff:
        return "no structural change"
    lines = []
    for rec in diff:
        if rec.op == "changed" and rec.before and rec.after and rec.before.get("name") != rec.after.get("name"):
            lines.append(f"{rec.op} {rec.path_str} (renamed to {rec.after.get('name')})")
        else:
            lines.append(f"{rec.op} {rec.path_str}")
    return "\n".join(lines)


_SUMMARY_PATH_CAP = 20
_SUMMARY_CONCERN_CAP = 240


def summarize_diff(diff: list[DiffRecord], feedback: str) -> str:
    """Deterministic bounded summary naming touched nodes and the concern.

    Used as the retrieval key for memory entries, so it must be short and a
    pure function of its inputs.
    """
    if not diff:
        head = "no structural change"
    else:
        parts = [f"{rec.op} {rec.path_str}" for rec in diff[:_SUMMARY_PATH_CAP]]
        tail = f"; and {len(diff) - _SUMMARY_PATH_CAP} more" if len(diff) > _SUMMARY_PATH_CAP else ""
        head = f"structural changes ({len(diff)}): " + "; ".join(parts) + tail
    concern = " ".join(feedback.split())
    if len(concern) > _SUMMARY_CONCERN_CAP:
        concern = concern[:_SUMMARY_CONCERN_CAP] + "..."
    return f"{head}\naddresses: {concern}"
