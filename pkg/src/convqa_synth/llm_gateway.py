"""Client boundary to chat-completion and embedding services.

One gateway object fronts both a chat backend and an embedding backend.
Backends come in two flavors: ``live`` (HTTP, with retry policy) and
``mock`` (fixture-keyed, for offline runs). Every completion is appended
to an audit log whose records are themselves valid fixture entries, so a
captured live run can be replayed offline.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import (
    AuthError,
    BackendContractError,
    FixtureError,
    StructuredOutputError,
    TemplateError,
    TransportError,
)
from .prompts import TEMPLATES, PromptTemplate

log = logging.getLogger(__name__)

MOCK_EMBEDDING_DIM = 32

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_FENCE = re.compile(r"```[A-Za-z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


@dataclass
class CompletionRequest:
    template_name: str
    bindings: Mapping[str, str]
    max_tokens: int = 2048
    temperature: float = 0.0  # default 0 for reproducibility
    backend: str = "mock"

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be > 0, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class EmbeddingVector:
    dim: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.dim <= 0 or len(self.values) != self.dim:
            raise ValueError("embedding dim does not match value count")
        if not all(np.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute every ``{placeholder}`` slot; pure in its inputs."""

    def _lookup(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise TemplateError(
                f"template {template.name!r} has no binding for placeholder {name!r}",
                placeholder=name,
            )
        return str(bindings[name])

    return _PLACEHOLDER.sub(_lookup, template.body)


def fingerprint(template_name: str, bindings: Mapping[str, str]) -> str:
    """Stable 64-bit hex fingerprint of (template name, sorted bindings).

    Keys fixture lookups and audit entries; identical across processes.
    """
    digest = hashlib.blake2b(digest_size=8)
    digest.update(template_name.encode("utf-8"))
    for key in sorted(bindings):
        digest.update(b"\x00")
        digest.update(key.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(str(bindings[key]).encode("utf-8"))
    return digest.hexdigest()


def extract_structured(text: str):
    """Return the outermost well-formed JSON value found in `text`.

    Tolerates surrounding prose and triple-backtick fences. No other repair
    is attempted; failure raises StructuredOutputError carrying the raw text.
    """
    candidates = [block for block in _FENCE.findall(text)]
    candidates.append(text)
    decoder = json.JSONDecoder()
    for candidate in candidates:
        stripped = candidate.strip()
        for start, char in enumerate(stripped):
            if char not in "[{":
                continue
            try:
                value, _ = decoder.raw_decode(stripped[start:])
                return value
            except json.JSONDecodeError:
                continue
    raise StructuredOutputError("no JSON value found in completion", raw_text=text)


class ChatBackend(Protocol):
    def complete(self, request: CompletionRequest, prompt: str) -> str: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class MockChatBackend:
    """Replays scripted responses keyed by (template, fingerprint).

    Accepts a fixture JSONL path or an in-memory mapping. Pure: no network,
    identical outputs across processes for the same fixture file.
    """

    def __init__(self, fixtures: str | Path | Mapping[tuple[str, str], str]):
        if isinstance(fixtures, Mapping):
            self._responses = dict(fixtures)
        else:
            self._responses = load_fixtures(fixtures)

    def complete(self, request: CompletionRequest, prompt: str) -> str:
        key = (request.template_name, fingerprint(request.template_name, request.bindings))
        try:
            return self._responses[key]
        except KeyError:
            raise FixtureError(
                f"no fixture response for template={key[0]!r} fingerprint={key[1]}"
            ) from None


def load_fixtures(path: str | Path) -> dict[tuple[str, str], str]:
    responses: dict[tuple[str, str], str] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            responses[(record["template"], record["fingerprint"])] = record["response"]
    return responses


class LiveChatBackend:
    """HTTP chat backend.

    Wire contract: POST {model, messages:[{role, content}], max_tokens,
    temperature} -> {content}. Transient failures (connection errors, 5xx)
    are retried with exponential backoff; auth failures are not.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "default",
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
        timeout: float = 120.0,
    ):
        self.base_url = base_url
        self.api_key = api_key
        self.model = model
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.timeout = timeout

    def complete(self, request: CompletionRequest, prompt: str) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_seconds * 2 ** (attempt - 1))
                log.info("retrying chat completion, attempt %d", attempt + 1)
            try:
                reply = requests.post(
                    self.base_url, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if reply.status_code in (401, 403):
                raise AuthError(f"chat backend rejected credentials ({reply.status_code})")
            if reply.status_code >= 500:
                last_error = TransportError(f"chat backend returned {reply.status_code}")
                continue
            if reply.status_code >= 400:
                raise TransportError(
                    f"chat backend returned {reply.status_code}: {reply.text[:200]}"
                )
            body = reply.json()
            if "content" not in body:
                raise BackendContractError("chat response missing 'content'")
            return str(body["content"])
        raise TransportError(
            f"chat completion failed after {self.max_retries + 1} attempts: {last_error}"
        )


class MockEmbeddingBackend:
    """Deterministic unit vectors seeded by a stable hash of the lowercased text."""

    def __init__(self, dim: int = MOCK_EMBEDDING_DIM):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out = []
        for text in texts:
            seed = int.from_bytes(
                hashlib.blake2b(text.lower().encode("utf-8"), digest_size=8).digest(),
                "big",
            )
            rng = np.random.default_rng(seed)
            values = rng.standard_normal(self.dim)
            values /= np.linalg.norm(values)
            out.append(EmbeddingVector(dim=self.dim, values=tuple(float(v) for v in values)))
        return out


class LiveEmbeddingBackend:
    """HTTP embedding backend: POST {texts:[...]} -> {dim, vectors:[[...]]}."""

    def __init__(self, base_url: str, timeout: float = 120.0):
        self.base_url = base_url
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        import requests

        try:
            reply = requests.post(self.base_url, json={"texts": list(texts)}, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"embedding backend unreachable: {exc}") from exc
        if reply.status_code >= 400:
            raise TransportError(f"embedding backend returned {reply.status_code}")
        body = reply.json()
        dim = int(body.get("dim", 0))
        vectors = body.get("vectors", [])
        if len(vectors) != len(texts):
            raise BackendContractError(
                f"embedding backend returned {len(vectors)} vectors for {len(texts)} texts"
            )
        out = []
        for vector in vectors:
            if len(vector) != dim:
                raise BackendContractError("embedding batch has inconsistent dims")
            out.append(EmbeddingVector(dim=dim, values=tuple(float(v) for v in vector)))
        return out


@dataclass
class LlmGateway:
    """Shared client for completions and embeddings.

    `parallelism` bounds in-flight requests in `complete_many`; results are
    always returned in request order regardless of completion order.
    """

    chat_backend: ChatBackend | None = None
    embedding_backend: EmbeddingBackend | None = None
    audit_log_path: str | Path | None = None
    parallelism: int = 4
    _audit_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, request: CompletionRequest) -> str:
        if self.chat_backend is None:
            raise TransportError("no chat backend configured")
        template = self.get_template(request.template_name)
        prompt = render_prompt(template, request.bindings)
        response = self.chat_backend.complete(request, prompt)
        self._audit(request, response)
        return response

    def complete_many(self, requests: Iterable[CompletionRequest]) -> list[str]:
        requests = list(requests)
        if not requests:
            return []
        with ThreadPoolExecutor(max_workers=max(1, self.parallelism)) as pool:
            return list(pool.map(self.complete, requests))

    def complete_structured(self, request: CompletionRequest):
        return extract_structured(self.complete(request))

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if self.embedding_backend is None:
            raise TransportError("no embedding backend configured")
        if not texts or any(not t for t in texts):
            raise ValueError("embed() requires a non-empty list of non-empty texts")
        vectors = self.embedding_backend.embed(texts)
        dims = {v.dim for v in vectors}
        if len(dims) > 1:
            raise BackendContractError(f"mixed embedding dims in one batch: {sorted(dims)}")
        return vectors

    @staticmethod
    def get_template(name: str) -> PromptTemplate:
        try:
            return TEMPLATES[name]
        except KeyError:
            raise TemplateError(f"unknown template {name!r}") from None

    def _audit(self, request: CompletionRequest, response: str) -> None:
        if self.audit_log_path is None:
            return
        entry = {
            "template": request.template_name,
            "fingerprint": fingerprint(request.template_name, request.bindings),
            "response": response,
        }
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._audit_lock:
            with open(self.audit_log_path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
