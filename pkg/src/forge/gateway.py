"""Model gateway: one entry point for live calls, recording and replay.

Replay is the default test posture: a cassette pins every request/response
pair by a content digest, so reruns are deterministic and perform zero
network operations.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

ENV_API_BASE = "FORGE_API_BASE"
ENV_MODEL = "FORGE_MODEL"
ENV_API_KEY = "FORGE_API_KEY"


class GatewayError(RuntimeError):
    pass


class RemoteError(GatewayError):
    def __init__(self, status: int, body_excerpt: str) -> None:
        super().__init__(f"remote endpoint returned {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class CassetteMiss(GatewayError):
    def __init__(self, digest: str, hint: str) -> None:
        super().__init__(f"no cassette entry for digest {digest}; {hint}")
        self.digest = digest
        self.hint = hint


class CassetteExhausted(GatewayError):
    def __init__(self, digest: str) -> None:
        super().__init__(
            f"cassette entry {digest} was already consumed in this run; "
            "the pipeline repeated an identical request"
        )
        self.digest = digest


class AgentRole(str, enum.Enum):
    ARCH = "arch"
    SKELETON = "skeleton"
    CODEFILL = "codefill"
    JUDGE_A = "judge_a"
    JUDGE_S = "judge_s"
    JUDGE_C = "judge_c"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 8192


_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatRequest:
    agent_role: AgentRole
    messages: tuple[tuple[str, str], ...]
    decoding: DecodingConfig = DecodingConfig()

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        object.__setattr__(self, "messages", tuple((r, t) for r, t in self.messages))
        if self.messages[0][0] != "system":
            raise ValueError("the first message must be a system message")
        for role, text in self.messages:
            if role not in _ROLES:
                raise ValueError(f"unknown message role {role!r}")
            if not isinstance(text, str):
                raise TypeError("message text must be a string")


def request_digest(request: ChatRequest) -> str:
    """Digest of (agent role, whitespace-normalized messages, decoding).

    Whitespace runs inside message text collapse to single spaces, so a
    cosmetic prompt reflow does not invalidate a cassette.
    """
    payload = {
        "agent_role": request.agent_role.value,
        "messages": [[role, " ".join(text.split())] for role, text in request.messages],
        "decoding": {
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
        },
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CassetteEntry:
    digest: str
    request: dict
    response: str


@dataclass
class Cassette:
    bundle_digest: str
    created_at: str
    entries: list[CassetteEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen = set()
        for entry in self.entries:
            if entry.digest in seen:
                raise ValueError(f"duplicate request digest in cassette: {entry.digest}")
            seen.add(entry.digest)

    def find(self, digest: str) -> CassetteEntry | None:
        for entry in self.entries:
            if entry.digest == digest:
                return entry
        return None

    def to_json(self) -> dict:
        return {
            "bundle_digest": self.bundle_digest,
            "created_at": self.created_at,
            "entries": [
                {"digest": e.digest, "request": e.request, "response": e.response}
                for e in self.entries
            ],
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: Path) -> "Cassette":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = [
            CassetteEntry(digest=e["digest"], request=e["request"], response=e["response"])
            for e in data["entries"]
        ]
        return cls(
            bundle_digest=data.get("bundle_digest", ""),
            created_at=data.get("created_at", ""),
            entries=entries,
        )


def _request_payload(request: ChatRequest) -> dict:
    return {
        "agent_role": request.agent_role.value,
        "messages": [[role, text] for role, text in request.messages],
        "decoding": {
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
        },
    }


class LiveBackend:
    """OpenAI-style chat-completions endpoint configured via environment."""

    TRANSIENT_STATUSES = frozenset({408, 409, 425, 429, 500, 502, 503, 504})

    def __init__(self, sleep: Callable[[float], None] = time.sleep) -> None:
        base = os.environ.get(ENV_API_BASE)
        model = os.environ.get(ENV_MODEL)
        if not base or not model:
            raise GatewayError(
                f"live backend needs {ENV_API_BASE} and {ENV_MODEL} set"
            )
        self.base = base.rstrip("/")
        self.model = model
        self.api_key = os.environ.get(ENV_API_KEY, "")
        self._sleep = sleep

    def complete(self, request: ChatRequest) -> str:
        import requests

        body = {
            "model": self.model,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base}/chat/completions"
        last_error: GatewayError | None = None
        for attempt in range(2):  # one retry with backoff on transient failures
            if attempt:
                self._sleep(2.0**attempt)
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=120)
            except requests.RequestException as exc:
                last_error = RemoteError(0, str(exc)[:200])
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise RemoteError(200, f"malformed completion body: {exc}") from exc
            error = RemoteError(resp.status_code, resp.text[:200])
            if resp.status_code not in self.TRANSIENT_STATUSES:
                raise error
            last_error = error
        assert last_error is not None
        raise last_error


class Gateway:
    """Front door for agent completions; counts calls for trace accounting."""

    def __init__(self, mode: str, backend=None, cassette: Cassette | None = None,
                 cassette_path: Path | None = None) -> None:
        self.mode = mode
        self._backend = backend
        self._cassette = cassette
        self._cassette_path = Path(cassette_path) if cassette_path else None
        self._consumed: set[str] = set()
        self.call_count = 0
        self.last_digest: str | None = None

    @classmethod
    def live(cls) -> "Gateway":
        return cls(mode="live", backend=LiveBackend())

    @classmethod
    def record(cls, cassette_path: Path, bundle_digest: str, backend=None) -> "Gateway":
        backend = backend if backend is not None else LiveBackend()
        cassette = Cassette(
            bundle_digest=bundle_digest,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        return cls(mode="record", backend=backend, cassette=cassette, cassette_path=cassette_path)

    @classmethod
    def replay(cls, cassette_path: Path) -> "Gateway":
        return cls(mode="replay", cassette=Cassette.load(cassette_path))

    def complete(self, request: ChatRequest) -> str:
        digest = request_digest(request)
        self.call_count += 1
        self.last_digest = digest
        if self.mode == "live":
            return self._backend.complete(request)
        if self.mode == "record":
            existing = self._cassette.find(digest)
            if existing is not None:
                # Digest uniqueness is an invariant; an identical request
                # reuses the recorded response instead of appending a twin.
                return existing.response
            response = self._backend.complete(request)
            self._cassette.entries.append(
                CassetteEntry(digest=digest, request=_request_payload(request), response=response)
            )
            self._cassette.save(self._cassette_path)
            return response
        # replay
        entry = self._cassette.find(digest)
        if entry is None:
            raise CassetteMiss(digest, self._miss_hint(request))
        if digest in self._consumed:
            raise CassetteExhausted(digest)
        self._consumed.add(digest)
        return entry.response

    def _miss_hint(self, request: ChatRequest) -> str:
        remaining = [e for e in self._cassette.entries if e.digest not in self._consumed]
        same_role = [
            e for e in remaining if e.request.get("agent_role") == request.agent_role.value
        ]
        pool = same_role or remaining
        if not pool:
            return "cassette has no unconsumed entries"
        nearest = pool[0]
        return (
            f"nearest unconsumed entry: digest {nearest.digest[:12]}... "
            f"(agent_role={nearest.request.get('agent_role')})"
        )
