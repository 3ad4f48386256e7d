"""Repo-level structural similarity score for generated code.

Combines four equally weighted components over .py files aligned by
relative path, each component in [0, 1]:

- bleu: geometric mean of 1..4-gram precisions over code tokens, with a
  brevity penalty. Levels where the candidate has no n-grams count 1.0
  when the reference has none either (short files), else 0.0.
- bleu_weight: the same with an n-gram weighted 5x when any of its tokens
  is a language keyword.
- match_struc: matched fraction of the reference's AST subtrees of height
  >= 2, by multiset intersection of shape signatures (identifier and
  constant values blinded).
- match_df: matched fraction of the reference's def-use events, with
  variable names normalized by first-definition order (rename-invariant).

Per-file scores are combined by reference-file LOC weights. Reference
files with no aligned candidate contribute 0 to every component; a
candidate file that fails to parse contributes 0 to match_struc and
match_df while the token components still count. The final score is
100 * 0.25 * (bleu + bleu_weight + match_struc + match_df).
"""

from __future__ import annotations

import ast
import keyword
import math
import re
from collections import Counter
from dataclasses import dataclass

from ..bundle import count_loc
from ..workspace import RepoSnapshot


class EmptyReference(ValueError):
    pass


_KEYWORDS = frozenset(keyword.kwlist)

_TOKEN_RE = re.compile(
    r'"""(?:\\.|[^\\])*?"""'
    r"|'''(?:\\.|[^\\])*?'''"
    r'|"(?:\\.|[^"\\\n])*"'
    r"|'(?:\\.|[^'\\\n])*'"
    r"|#[^\n]*"
    r"|[A-Za-z_][A-Za-z0-9_]*"
    r"|\d+(?:\.\d+)?(?:[eE][+-]?\d+)?"
    r"|[^\s]",
    re.DOTALL,
)


def code_tokens(source: str) -> list[str]:
    """Lexical tokens; comments dropped, string literals kept whole."""
    return [m.group(0) for m in _TOKEN_RE.finditer(source) if not m.group(0).startswith("#")]


def token_spans(source: str) -> list[tuple[str, int, int]]:
    """Tokens with character spans, for span-splicing experiments."""
    return [
        (m.group(0), m.start(), m.end())
        for m in _TOKEN_RE.finditer(source)
        if not m.group(0).startswith("#")
    ]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _gram_weight(gram: tuple[str, ...]) -> float:
    return 5.0 if any(tok in _KEYWORDS for tok in gram) else 1.0


def _bleu(cand: list[str], ref: list[str], weighted: bool) -> float:
    precisions: list[float] = []
    for n in range(1, 5):
        c_counts = _ngrams(cand, n)
        r_counts = _ngrams(ref, n)
        if not c_counts:
            precisions.append(1.0 if not r_counts else 0.0)
            continue
        if weighted:
            matched = sum(
                _gram_weight(g) * min(c, r_counts.get(g, 0)) for g, c in c_counts.items()
            )
            possible = sum(_gram_weight(g) * c for g, c in c_counts.items())
        else:
            matched = sum(min(c, r_counts.get(g, 0)) for g, c in c_counts.items())
            possible = sum(c_counts.values())
        precisions.append(matched / possible)
    if any(p == 0.0 for p in precisions):
        geo = 0.0
    else:
        geo = math.exp(sum(math.log(p) for p in precisions) / 4.0)
    c_len, r_len = len(cand), len(ref)
    if c_len >= r_len:
        bp = 1.0
    elif c_len == 0:
        bp = 0.0
    else:
        bp = math.exp(1.0 - r_len / c_len)
    return bp * geo


def _subtree_signatures(tree: ast.AST) -> Counter:
    sigs: Counter = Counter()

    def walk(node: ast.AST) -> tuple[str, int]:
        children = list(ast.iter_child_nodes(node))
        label = type(node).__name__
        if not children:
            return label, 1
        parts = []
        height = 1
        for child in children:
            sig, child_height = walk(child)
            parts.append(sig)
            height = max(height, child_height + 1)
        sig = f"{label}({','.join(parts)})"
        sigs[sig] += 1
        return sig, height

    walk(tree)
    return sigs


class _DefUse(ast.NodeVisitor):
    """def-use events with names normalized by first-definition order."""

    def __init__(self) -> None:
        self.first_def: dict[str, int] = {}
        self.def_ordinal: dict[str, int] = {}
        self.uses_since: dict[str, int] = {}
        self.edges: Counter = Counter()

    def _define(self, name: str) -> None:
        if name not in self.first_def:
            self.first_def[name] = len(self.first_def)
        self.def_ordinal[name] = self.def_ordinal.get(name, -1) + 1
        self.uses_since[name] = 0

    def _use(self, name: str) -> None:
        if name not in self.def_ordinal:
            return
        slot = f"v{self.first_def[name]}"
        self.edges[(slot, self.def_ordinal[name], self.uses_since[name])] += 1
        self.uses_since[name] += 1

    def visit_Name(self, node: ast.Name) -> None:
        if isinstance(node.ctx, ast.Load):
            self._use(node.id)
        else:
            self._define(node.id)

    def visit_arg(self, node: ast.arg) -> None:
        self._define(node.arg)

    def visit_arguments(self, node: ast.arguments) -> None:
        # Defaults are visited by the enclosing function/lambda handler.
        for group in (node.posonlyargs, node.args, node.kwonlyargs):
            for item in group:
                self.visit(item)
        if node.vararg:
            self.visit(node.vararg)
        if node.kwarg:
            self.visit(node.kwarg)

    def visit_Assign(self, node: ast.Assign) -> None:
        self.visit(node.value)
        for target in node.targets:
            self.visit(target)

    def visit_AnnAssign(self, node: ast.AnnAssign) -> None:
        if node.value is not None:
            self.visit(node.value)
        self.visit(node.target)

    def visit_AugAssign(self, node: ast.AugAssign) -> None:
        self.visit(node.value)
        if isinstance(node.target, ast.Name):
            self._use(node.target.id)
            self._define(node.target.id)
        else:
            self.visit(node.target)

    def visit_For(self, node: ast.For) -> None:
        self.visit(node.iter)
        self.visit(node.target)
        for stmt in node.body + node.orelse:
            self.visit(stmt)

    def _visit_function(self, node) -> None:
        for decorator in node.decorator_list:
            self.visit(decorator)
        defaults = list(node.args.defaults) + [d for d in node.args.kw_defaults if d]
        for default in defaults:
            self.visit(default)
        self._define(node.name)
        self.visit(node.args)
        for stmt in node.body:
            self.visit(stmt)

    def visit_FunctionDef(self, node: ast.FunctionDef) -> None:
        self._visit_function(node)

    def visit_AsyncFunctionDef(self, node: ast.AsyncFunctionDef) -> None:
        self._visit_function(node)

    def visit_Lambda(self, node: ast.Lambda) -> None:
        for default in list(node.args.defaults) + [d for d in node.args.kw_defaults if d]:
            self.visit(default)
        self.visit(node.args)
        self.visit(node.body)

    def visit_ClassDef(self, node: ast.ClassDef) -> None:
        for decorator in node.decorator_list:
            self.visit(decorator)
        for base in node.bases + [kw.value for kw in node.keywords]:
            self.visit(base)
        self._define(node.name)
        for stmt in node.body:
            self.visit(stmt)


def def_use_events(tree: ast.AST) -> Counter:
    visitor = _DefUse()
    visitor.visit(tree)
    return visitor.edges


def _match_fraction(cand: Counter, ref: Counter) -> float:
    total = sum(ref.values())
    if total == 0:
        return 1.0
    matched = sum(min(count, cand.get(item, 0)) for item, count in ref.items())
    return matched / total


@dataclass(frozen=True)
class FileScore:
    path: str
    weight: int
    bleu: float
    bleu_weight: float
    match_struc: float
    match_df: float
    parse_failed: bool = False
    missing: bool = False


@dataclass(frozen=True)
class SketchBleuScore:
    total: float
    bleu: float
    bleu_weight: float
    match_struc: float
    match_df: float
    files: tuple[FileScore, ...] = ()

    @property
    def parse_failures(self) -> tuple[str, ...]:
        return tuple(f.path for f in self.files if f.parse_failed)


def _score_file(path: str, cand_src: str, ref_src: str, weight: int) -> FileScore:
    cand_tokens = code_tokens(cand_src)
    ref_tokens = code_tokens(ref_src)
    bleu = _bleu(cand_tokens, ref_tokens, weighted=False)
    bleu_w = _bleu(cand_tokens, ref_tokens, weighted=True)
    try:
        cand_tree = ast.parse(cand_src)
    except SyntaxError:
        return FileScore(
            path=path,
            weight=weight,
            bleu=bleu,
            bleu_weight=bleu_w,
            match_struc=0.0,
            match_df=0.0,
            parse_failed=True,
        )
    try:
        ref_tree = ast.parse(ref_src)
        ref_sigs = _subtree_signatures(ref_tree)
        ref_edges = def_use_events(ref_tree)
    except SyntaxError:
        ref_sigs = Counter()
        ref_edges = Counter()
    struc = _match_fraction(_subtree_signatures(cand_tree), ref_sigs)
    df = _match_fraction(def_use_events(cand_tree), ref_edges)
    return FileScore(
        path=path,
        weight=weight,
        bleu=bleu,
        bleu_weight=bleu_w,
        match_struc=struc,
        match_df=df,
    )


def sketchbleu(candidate: RepoSnapshot, reference: RepoSnapshot) -> SketchBleuScore:
    """Score the candidate against the reference; identity scores 100."""
    ref_paths = [p for p in reference.paths() if p.endswith(".py")]
    if not ref_paths:
        raise EmptyReference("reference contains no .py files")
    scores: list[FileScore] = []
    for path in ref_paths:
        ref_src = reference.files[path]
        weight = count_loc(ref_src)
        cand_src = candidate.files.get(path)
        if cand_src is None:
            scores.append(
                FileScore(
                    path=path,
                    weight=weight,
                    bleu=0.0,
                    bleu_weight=0.0,
                    match_struc=0.0,
                    match_df=0.0,
                    missing=True,
                )
            )
        else:
            scores.append(_score_file(path, cand_src, ref_src, weight))
    total_weight = sum(s.weight for s in scores)
    if total_weight == 0:
        raise EmptyReference("reference .py files contain no countable lines")

    def combine(component) -> float:
        return sum(component(s) * s.weight for s in scores) / total_weight

    bleu = combine(lambda s: s.bleu)
    bleu_w = combine(lambda s: s.bleu_weight)
    struc = combine(lambda s: s.match_struc)
    df = combine(lambda s: s.match_df)
    total = 100.0 * 0.25 * (bleu + bleu_w + struc + df)
    return SketchBleuScore(
        total=total,
        bleu=bleu,
        bleu_weight=bleu_w,
        match_struc=struc,
        match_df=df,
        files=tuple(scores),
    )
