"""Per-phase refinement memory with BM25 retrieval over entry summaries.

Each pipeline phase keeps an append-only store of rejected iterations:
the judge feedback, the change that produced the judged output, a bounded
summary, and (for the fill phase) the change in check-test passes. Ranking
runs over the summaries only; prompts get the raw feedback and diff back.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .phases import Phase

BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN_SPLIT_RE = re.compile(r"[^0-9a-z]+")


class PhaseMismatch(ValueError):
    pass


class NonMonotoneIteration(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop single-character tokens."""
    return [t for t in _TOKEN_SPLIT_RE.split(text.lower()) if len(t) > 1]


@dataclass(frozen=True)
class MemoryEntry:
    phase: Phase
    iteration: int
    feedback: str
    diff: str
    summary: str
    pass_delta: int | None = None

    def __post_init__(self) -> None:
        if self.phase not in (Phase.ARCH, Phase.SKELETON, Phase.CODEFILL):
            raise PhaseMismatch(f"memory entries cannot belong to phase {self.phase}")
        if self.iteration < 0:
            raise NonMonotoneIteration(f"iteration must be nonnegative, got {self.iteration}")
        if self.pass_delta is not None and self.phase is not Phase.CODEFILL:
            raise PhaseMismatch("pass_delta is only meaningful for the codefill phase")

    def to_json(self) -> dict:
        out = {
            "phase": self.phase.value,
            "iteration": self.iteration,
            "feedback": self.feedback,
            "diff": self.diff,
            "summary": self.summary,
        }
        if self.pass_delta is not None:
            out["pass_delta"] = self.pass_delta
        return out

    @classmethod
    def from_json(cls, data: dict) -> "MemoryEntry":
        return cls(
            phase=Phase(data["phase"]),
            iteration=int(data["iteration"]),
            feedback=data["feedback"],
            diff=data["diff"],
            summary=data["summary"],
            pass_delta=data.get("pass_delta"),
        )


@dataclass(frozen=True)
class MemoryStore:
    """Append-only store scoped to one phase of one run."""

    phase: Phase
    entries: tuple[MemoryEntry, ...] = ()

    def __post_init__(self) -> None:
        last = -1
        for entry in self.entries:
            if entry.phase is not self.phase:
                raise PhaseMismatch(
                    f"entry phase {entry.phase} does not match store phase {self.phase}"
                )
            if entry.iteration <= last:
                raise NonMonotoneIteration(
                    f"iterations must be strictly increasing, saw {entry.iteration} after {last}"
                )
            last = entry.iteration

    def append(self, entry: MemoryEntry) -> "MemoryStore":
        """Functional append: returns a new store, the old one is unchanged."""
        return MemoryStore(phase=self.phase, entries=self.entries + (entry,))

    def __len__(self) -> int:
        return len(self.entries)


def append(store: MemoryStore, entry: MemoryEntry) -> MemoryStore:
    return store.append(entry)


def _bm25_scores(query_tokens: list[str], docs: list[list[str]]) -> list[float]:
    n = len(docs)
    if n == 0:
        return []
    avgdl = sum(len(d) for d in docs) / n
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    scores = []
    for doc in docs:
        dl = len(doc)
        score = 0.0
        for term in query_tokens:
            tf = doc.count(term)
            if tf == 0:
                continue
            idf = math.log((n - df[term] + 0.5) / (df[term] + 0.5) + 1.0)
            if avgdl > 0:
                norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl)
            else:
                norm = BM25_K1
            score += idf * tf * (BM25_K1 + 1.0) / (tf + norm)
        scores.append(score)
    return scores


def retrieve(store: MemoryStore, query: str, gamma: int) -> list[MemoryEntry]:
    """Top-gamma entries by BM25 over summaries; ties go to higher iteration.

    Codefill entries whose recorded change reduced the check-test pass count
    (pass_delta < 0) are dropped before ranking; a delta of zero stays
    eligible. Corpus statistics come from the eligible entries.
    """
    if gamma <= 0:
        return []
    eligible = [
        e
        for e in store.entries
        if not (store.phase is Phase.CODEFILL and e.pass_delta is not None and e.pass_delta < 0)
    ]
    if not eligible:
        return []
    query_tokens = tokenize(query)
    docs = [tokenize(e.summary) for e in eligible]
    scores = _bm25_scores(query_tokens, docs)
    ranked = sorted(
        zip(eligible, scores), key=lambda pair: (-pair[1], -pair[0].iteration)
    )
    return [entry for entry, _ in ranked[:gamma]]


def render_entry(entry: MemoryEntry, diff_cap: int = 4000) -> str:
    """Text block for prompt inclusion: raw feedback and diff, not the summary."""
    diff = entry.diff
    if len(diff) > diff_cap:
        diff = diff[:diff_cap] + "\n... (diff truncated)"
    lines = [f"[{entry.phase.value} iteration {entry.iteration}]"]
    if entry.pass_delta is not None:
        lines.append(f"check-test pass delta: {entry.pass_delta:+d}")
    lines.append(f"feedback: {entry.feedback}")
    lines.append(f"change made:\n{diff}")
    return "\n".join(lines)


def save_store(store: MemoryStore, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in store.entries:
            fh.write(json.dumps(entry.to_json(), ensure_ascii=False) + "\n")


def load_store(path, phase: Phase) -> MemoryStore:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(MemoryEntry.from_json(json.loads(line)))
    return MemoryStore(phase=phase, entries=tuple(entries))
