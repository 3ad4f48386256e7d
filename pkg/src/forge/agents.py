"""Prompt builders and response parsers for the generation and judge agents.

Builders are pure: equal inputs produce byte-equal requests. Judges never
receive memory context; generation agents receive retrieved memory entries
verbatim plus the latest judge feedback.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from string import Template

from .bundle import TaskBundle
from .gateway import AgentRole, ChatRequest, DecodingConfig
from .ssat import FileNode, SsatTree, file_payload, parse_ssat, serialize_ssat
from .workspace import RepoSnapshot, validate_relpath

JUDGE_A_DIMENSIONS: tuple[str, ...] = (
    "Requirement Coverage",
    "Consistency with Provided Information",
    "Interface Consistency",
    "Dependency Relations",
)

JUDGE_S_DIMENSIONS: tuple[str, ...] = (
    "Directory Structure Matching",
    "Interface & Call Relationship Matching",
)


class ResponseFormatError(ValueError):
    pass


class NoBlockFound(ResponseFormatError):
    pass


class MultipleBlocks(ResponseFormatError):
    pass


class MissingDimension(ResponseFormatError):
    def __init__(self, name: str) -> None:
        super().__init__(f"verdict is missing dimension {name!r}")
        self.name = name


class MissingOverall(ResponseFormatError):
    def __init__(self) -> None:
        super().__init__("verdict is missing the OVERALL line")


class ScoreOutOfRange(ResponseFormatError):
    pass


class DuplicatePath(ResponseFormatError):
    def __init__(self, path: str) -> None:
        super().__init__(f"response declares path {path!r} twice")
        self.path = path


class UnparseableFeedback(ResponseFormatError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    dimensions: tuple[tuple[str, float, str], ...]  # (name, score, rationale)
    overall: float
    accept: bool


@dataclass(frozen=True)
class CodeFillFeedback:
    passed: bool
    failing_summary: str
    files_to_modify: tuple[str, ...]
    suggestions: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "files_to_modify", tuple(self.files_to_modify))
        if self.passed and self.files_to_modify:
            raise UnparseableFeedback(
                "feedback declares all tests addressed but still lists files to modify"
            )


def all_pass_feedback() -> CodeFillFeedback:
    """Short-circuit result when every check test already passes."""
    return CodeFillFeedback(
        passed=True, failing_summary="", files_to_modify=(), suggestions=""
    )


def _template(name: str) -> Template:
    text = resources.files("forge.prompts").joinpath(name).read_text(encoding="utf-8")
    return Template(text)


_SCHEMA_HINT = """```json
{
  "modules": [
    {
      "kind": "module",
      "name": "<identifier>",
      "description": "<text>",
      "files": [
        {
          "kind": "file",
          "name": "<file name>",
          "description": "<text>",
          "path": "<relative path ending in the file name>",
          "global_code": [
            {"kind": "global_code", "name": "<identifier>", "description": "<text>"}
          ],
          "classes": [
            {
              "kind": "class",
              "name": "<identifier>",
              "description": "<text>",
              "functions": [
                {
                  "kind": "function",
                  "name": "<identifier>",
                  "description": "<text>",
                  "parameters": [
                    {"name": "<identifier>", "type": "<text>", "description": "<text>"}
                  ]
                }
              ]
            }
          ],
          "functions": [
            {
              "kind": "function",
              "name": "<identifier>",
              "description": "<text>",
              "parameters": []
            }
          ]
        }
      ]
    }
  ]
}
```"""


def _uml_block(bundle: TaskBundle) -> str:
    return "\n\n".join(bundle.uml_diagrams)


def _context_blocks(memory_context: tuple[str, ...], prior_feedback: str | None) -> str:
    """Memory entries verbatim, then the latest feedback; empty when absent."""
    parts: list[str] = []
    if memory_context:
        parts.append("\n## Prior refinement memory\n")
        parts.extend(f"{entry}\n" for entry in memory_context)
    if prior_feedback is not None:
        parts.append(f"\n## Latest judge feedback\n\n{prior_feedback}\n")
    return "".join(parts)


def build_arch_prompt(
    bundle: TaskBundle,
    memory_context: tuple[str, ...] = (),
    prior_feedback: str | None = None,
) -> ChatRequest:
    user = _template("arch_user.md").substitute(
        prd=bundle.prd,
        uml=_uml_block(bundle),
        architecture=bundle.architecture_doc,
        schema=_SCHEMA_HINT,
    )
    user += _context_blocks(tuple(memory_context), prior_feedback)
    return ChatRequest(
        agent_role=AgentRole.ARCH,
        messages=(
            ("system", _template("arch_system.md").substitute()),
            ("user", user),
        ),
    )


def build_judge_a_prompt(tree: SsatTree, bundle: TaskBundle) -> ChatRequest:
    user = _template("judge_arch_user.md").substitute(
        prd=bundle.prd,
        uml=_uml_block(bundle),
        architecture=bundle.architecture_doc,
        ssat=serialize_ssat(tree).rstrip("\n"),
    )
    return ChatRequest(
        agent_role=AgentRole.JUDGE_A,
        messages=(
            ("system", _template("judge_arch_system.md").substitute()),
            ("user", user),
        ),
    )


def _tree_overview(tree: SsatTree) -> str:
    lines = []
    for module in tree.modules:
        lines.append(f"module {module.name}: {module.description}")
        for file in module.files:
            lines.append(f"  {file.path}: {file.description}")
    return "\n".join(lines)


def build_skeleton_prompt(
    tree: SsatTree,
    file_node: FileNode,
    memory_context: tuple[str, ...] = (),
    prior_feedback: str | None = None,
) -> ChatRequest:
    import json as _json

    subtree = _json.dumps(file_payload(file_node), indent=2, ensure_ascii=False)
    user = _template("skeleton_user.md").substitute(
        overview=_tree_overview(tree),
        path=file_node.path,
        subtree=subtree,
    )
    user += _context_blocks(tuple(memory_context), prior_feedback)
    return ChatRequest(
        agent_role=AgentRole.SKELETON,
        messages=(
            ("system", _template("skeleton_system.md").substitute()),
            ("user", user),
        ),
    )


def _repo_listing(repo: RepoSnapshot) -> str:
    parts = []
    for path in repo.paths():
        parts.append(f"### FILE: {path}\n```python\n{repo.files[path]}\n```")
    return "\n\n".join(parts)


def build_judge_s_prompt(repo: RepoSnapshot, tree: SsatTree) -> ChatRequest:
    user = _template("judge_skeleton_user.md").substitute(
        ssat=serialize_ssat(tree).rstrip("\n"),
        listing=_repo_listing(repo),
    )
    return ChatRequest(
        agent_role=AgentRole.JUDGE_S,
        messages=(
            ("system", _template("judge_skeleton_system.md").substitute()),
            ("user", user),
        ),
    )


def build_codefill_prompt(
    skeleton_file: tuple[str, str],
    context_files: tuple[tuple[str, str], ...] = (),
    memory_context: tuple[str, ...] = (),
    prior_feedback: str | None = None,
) -> ChatRequest:
    path, skeleton = skeleton_file
    if context_files:
        context = "\n\n".join(
            f"### FILE: {p}\n```python\n{c}\n```" for p, c in context_files
        )
    else:
        context = "(none yet)"
    user = _template("codefill_user.md").substitute(
        context=context, path=path, skeleton=skeleton
    )
    user += _context_blocks(tuple(memory_context), prior_feedback)
    return ChatRequest(
        agent_role=AgentRole.CODEFILL,
        messages=(
            ("system", _template("codefill_system.md").substitute()),
            ("user", user),
        ),
    )


def build_judge_c_prompt(report, error_log: str, repo: RepoSnapshot) -> ChatRequest:
    rows = [f"{report.passed}/{report.total} check tests passed", ""]
    for result in report.results:
        line = f"{result.test_id}: {result.status}"
        if result.category is not None:
            line += f" [{result.category.value}]"
        if result.message:
            excerpt = " ".join(result.message.split())
            if len(excerpt) > 200:
                excerpt = excerpt[:200] + "..."
            line += f" {excerpt}"
        rows.append(line)
    user = _template("judge_codefill_user.md").substitute(
        report="\n".join(rows),
        error_log=error_log,
        repo=_repo_listing(repo),
    )
    return ChatRequest(
        agent_role=AgentRole.JUDGE_C,
        messages=(
            ("system", _template("judge_codefill_system.md").substitute()),
            ("user", user),
        ),
    )


def build_reprompt(request: ChatRequest, bad_response: str, error: str) -> ChatRequest:
    """Corrective follow-up in the same iteration after a parse failure."""
    correction = _template("reprompt.md").substitute(error=" ".join(error.split()))
    return ChatRequest(
        agent_role=request.agent_role,
        messages=request.messages + (("assistant", bad_response), ("user", correction)),
        decoding=request.decoding,
    )


# --- response parsing ----------------------------------------------------------

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)\n?```", re.DOTALL)
_FILE_BLOCK_RE = re.compile(
    r"^###\s*FILE:[ \t]*(?P<path>\S+)[ \t]*\n+```[^\n`]*\n(?P<body>.*?)\n?```",
    re.DOTALL | re.MULTILINE,
)


def parse_ssat_response(resp: str) -> SsatTree:
    """The response must contain exactly one fenced block holding the tree."""
    blocks = _FENCE_RE.findall(resp)
    if not blocks:
        raise NoBlockFound("no fenced block in response")
    if len(blocks) > 1:
        raise MultipleBlocks(f"expected one fenced block, found {len(blocks)}")
    return parse_ssat(blocks[0])


def parse_code_response(resp: str) -> list[tuple[str, str]]:
    """All '### FILE:' headed fenced blocks, in order of appearance."""
    out: list[tuple[str, str]] = []
    seen: set[str] = set()
    for match in _FILE_BLOCK_RE.finditer(resp):
        path = validate_relpath(match.group("path"))
        if path in seen:
            raise DuplicatePath(path)
        seen.add(path)
        out.append((path, match.group("body")))
    if not out:
        raise NoBlockFound("no '### FILE:' headed fenced block in response")
    return out


_DIM_RE = re.compile(
    r"^\s*DIM\s+(?P<name>.+?)\s*:\s*(?P<score>\d+(?:\.\d+)?)\s*/\s*10"
    r"\s*(?:[—–-]+\s*(?P<rationale>.*?))?\s*$"
)
_OVERALL_RE = re.compile(r"^\s*OVERALL\s*:\s*(?P<score>\d+(?:\.\d+)?)\s*/\s*10\s*$")


def parse_verdict(
    resp: str, expected_dimensions: tuple[str, ...], threshold: float = 8.0
) -> JudgeVerdict:
    """Parse DIM/OVERALL lines; tolerant of line order and dash flavor."""
    found: dict[str, tuple[float, str]] = {}
    overall: float | None = None
    for line in resp.splitlines():
        m = _OVERALL_RE.match(line)
        if m:
            overall = float(m.group("score"))
            continue
        m = _DIM_RE.match(line)
        if m:
            name = m.group("name").strip()
            key = name.casefold()
            if key not in found:
                found[key] = (float(m.group("score")), (m.group("rationale") or "").strip())
    dimensions: list[tuple[str, float, str]] = []
    for name in expected_dimensions:
        hit = found.get(name.casefold())
        if hit is None:
            raise MissingDimension(name)
        score, rationale = hit
        if not 0.0 <= score <= 10.0:
            raise ScoreOutOfRange(f"dimension {name!r} scored {score}, outside 0..10")
        dimensions.append((name, score, rationale))
    if overall is None:
        raise MissingOverall()
    if not 0.0 <= overall <= 10.0:
        raise ScoreOutOfRange(f"overall score {overall} outside 0..10")
    return JudgeVerdict(
        dimensions=tuple(dimensions), overall=overall, accept=overall >= threshold
    )


_PASSED_RE = re.compile(r"^\s*PASSED\s*:\s*(?P<value>yes|no)\s*$", re.IGNORECASE)
_FILES_HEADER_RE = re.compile(r"^\s*FILES_TO_MODIFY\s*:\s*$")
_BULLET_RE = re.compile(r"^\s*-\s+(?P<path>\S+)\s*$")
_ANALYSIS_RE = re.compile(r"^\s*ANALYSIS\s*:\s*(?P<text>.*)$")
_SUGGESTIONS_RE = re.compile(r"^\s*SUGGESTIONS\s*:\s*(?P<text>.*)$")


def parse_codefill_feedback(resp: str) -> CodeFillFeedback:
    passed: bool | None = None
    saw_files_header = False
    analysis: list[str] = []
    suggestions: list[str] = []
    files: list[str] = []
    section = None  # None | analysis | files | suggestions
    for line in resp.splitlines():
        m = _PASSED_RE.match(line)
        if m:
            passed = m.group("value").lower() == "yes"
            section = None
            continue
        m = _ANALYSIS_RE.match(line)
        if m:
            analysis.append(m.group("text"))
            section = "analysis"
            continue
        if _FILES_HEADER_RE.match(line):
            saw_files_header = True
            section = "files"
            continue
        m = _SUGGESTIONS_RE.match(line)
        if m:
            suggestions.append(m.group("text"))
            section = "suggestions"
            continue
        if section == "files":
            m = _BULLET_RE.match(line)
            if m:
                path = m.group("path")
                if path not in files:
                    files.append(path)
            elif line.strip():
                section = None
        elif section == "analysis":
            analysis.append(line)
        elif section == "suggestions":
            suggestions.append(line)
    if passed is None:
        raise UnparseableFeedback("missing PASSED line")
    if not passed and not saw_files_header:
        raise UnparseableFeedback("missing FILES_TO_MODIFY section")
    for path in files:
        validate_relpath(path)
    return CodeFillFeedback(
        passed=passed,
        failing_summary="\n".join(analysis).strip(),
        files_to_modify=tuple(files),
        suggestions="\n".join(suggestions).strip(),
    )
