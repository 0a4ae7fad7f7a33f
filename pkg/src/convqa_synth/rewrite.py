"""Query formulation strategies and the conditional rewrite protocol.

A turn can be queried four ways: `context` (the previous h question-answer
pairs concatenated with the current contextualized question), `query_co`
(contextualized question alone), `query_de` (gold decontextualized question
alone), or `rewriter` (an external endpoint producing token-prefixed output:
`no_rewrite` keeps the input question, `rewrite <text>` substitutes it).

History joining is chronological "Q A Q A ... current-Q" with single-space
separators and no role markers; the same convention feeds both retrieval
queries and rewriter training inputs so train and inference match.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

from .dialog_synth import Dialog
from .errors import FixtureError, StateError, TransportError
from .llm_gateway import CompletionRequest, LlmGateway

log = logging.getLogger(__name__)

NO_REWRITE_TOKEN = "no_rewrite"
REWRITE_TOKEN = "rewrite"

KINDS = ("context", "query_co", "query_de", "rewriter")


@dataclass(frozen=True)
class Formulation:
    kind: str
    history_pairs: int = 1  # h; only the context and rewriter kinds use it
    rewriter_endpoint: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown formulation kind {self.kind!r}; expected one of {KINDS}")
        if self.history_pairs < 0:
            raise ValueError("history_pairs must be >= 0")


@dataclass(frozen=True)
class RewriteResult:
    query: str
    was_rewritten: bool
    latency_seconds: float = 0.0


class RewriterClient(Protocol):
    def rewrite(self, history: str, question: str) -> str: ...


def conditional_rewrite(model_output: str, original_co: str) -> RewriteResult:
    """Interpret token-prefixed rewriter output.

    `no_rewrite` returns the original question byte-identically, discarding
    anything generated past the token. `rewrite` returns the trimmed
    remainder. Output with neither token is treated as a bare rewrite, with
    a warning.
    """
    stripped = model_output.strip()
    if _has_token(stripped, NO_REWRITE_TOKEN):
        return RewriteResult(query=original_co, was_rewritten=False)
    if _has_token(stripped, REWRITE_TOKEN):
        return RewriteResult(query=stripped[len(REWRITE_TOKEN):].strip(), was_rewritten=True)
    log.warning("rewriter output carries no protocol token; treating as bare rewrite")
    return RewriteResult(query=stripped, was_rewritten=True)


def _has_token(text: str, token: str) -> bool:
    return text == token or (text.startswith(token) and text[len(token)].isspace())


def history_text(dialog: Dialog, turn_index: int, h: int) -> str:
    """The previous h question-answer pairs, chronological, space-joined."""
    parts = []
    for pair in dialog.pairs[max(0, turn_index - h):turn_index]:
        parts.append(pair.user_co)
        parts.append(pair.system)
    return " ".join(parts)


def formulate(dialog: Dialog, turn_index: int, formulation: Formulation,
              rewriter: RewriterClient | None = None) -> str:
    """Produce the query string for one dialog turn under a strategy."""
    if not 0 <= turn_index < len(dialog.pairs):
        raise ValueError(
            f"turn_index {turn_index} out of range for dialog of {len(dialog.pairs)} pairs")
    pair = dialog.pairs[turn_index]
    if formulation.kind == "query_co":
        return pair.user_co
    if formulation.kind == "query_de":
        return pair.user_de
    if formulation.kind == "context":
        history = history_text(dialog, turn_index, formulation.history_pairs)
        return f"{history} {pair.user_co}" if history else pair.user_co
    # rewriter
    return rewrite_turn(dialog, turn_index, formulation, rewriter).query


def rewrite_turn(dialog: Dialog, turn_index: int, formulation: Formulation,
                 rewriter: RewriterClient | None) -> RewriteResult:
    """Run the rewriter endpoint on one turn; latency covers the call only."""
    if rewriter is None:
        if formulation.rewriter_endpoint is None:
            raise StateError("rewriter strategy requires an endpoint or a mock client")
        rewriter = HttpRewriter(formulation.rewriter_endpoint)
    pair = dialog.pairs[turn_index]
    history = history_text(dialog, turn_index, formulation.history_pairs)
    started = time.perf_counter()
    output = rewriter.rewrite(history, pair.user_co)
    elapsed = time.perf_counter() - started
    result = conditional_rewrite(output, pair.user_co)
    return RewriteResult(query=result.query, was_rewritten=result.was_rewritten,
                         latency_seconds=elapsed)


def rewriter_input(history: str, question: str) -> str:
    """The single-string endpoint input; shares formulate's separator rule."""
    return f"{history} {question}" if history else question


class HttpRewriter:
    """Wire contract: POST {input, max_tokens} -> {output}."""

    def __init__(self, endpoint: str, max_tokens: int = 256, timeout: float = 60.0):
        self.endpoint = endpoint
        self.max_tokens = max_tokens
        self.timeout = timeout

    def rewrite(self, history: str, question: str) -> str:
        import requests

        payload = {"input": rewriter_input(history, question), "max_tokens": self.max_tokens}
        try:
            reply = requests.post(self.endpoint, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"rewriter endpoint unreachable: {exc}") from exc
        if reply.status_code >= 400:
            raise TransportError(f"rewriter endpoint returned {reply.status_code}")
        return str(reply.json().get("output", ""))


class MockRewriter:
    """Offline stand-in keyed by the endpoint input string, or a callable."""

    def __init__(self, responses: Mapping[str, str] | Callable[[str], str]):
        self._responses = responses

    def rewrite(self, history: str, question: str) -> str:
        key = rewriter_input(history, question)
        if callable(self._responses):
            return self._responses(key)
        try:
            return self._responses[key]
        except KeyError:
            raise FixtureError(f"mock rewriter has no response for input {key!r}") from None


class LlmPromptRewriter:
    """Rewrites by prompting the chat backend with the shipped rewriter template."""

    def __init__(self, gateway: LlmGateway, max_tokens: int = 256):
        self.gateway = gateway
        self.max_tokens = max_tokens

    def rewrite(self, history: str, question: str) -> str:
        request = CompletionRequest(
            template_name="rewriter",
            bindings={"history": history, "question": question},
            max_tokens=self.max_tokens)
        return self.gateway.complete(request)


def make_rewriter_training_pairs(dialogs: Iterable[Dialog],
                                 h: int = 1) -> list[tuple[str, str]]:
    """Training pairs for the conditional rewriter, one per non-greeting pair.

    input  = history (h pairs) + contextualized question
    target = "rewrite <decontextualized question>" when the two versions
             differ, else "no_rewrite"
    """
    pairs = []
    for dialog in dialogs:
        for turn_index, pair in enumerate(dialog.pairs):
            if pair.is_greeting:
                continue
            history = history_text(dialog, turn_index, h)
            source = rewriter_input(history, pair.user_co)
            if pair.user_de != pair.user_co:
                target = f"{REWRITE_TOKEN} {pair.user_de}"
            else:
                target = NO_REWRITE_TOKEN
            pairs.append((source, target))
    return pairs


def save_training_pairs(pairs: Iterable[tuple[str, str]], path: str | Path) -> None:
    """TSV export with backslash-escaped tabs/newlines (columns: input, target)."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("input\ttarget\n")
        for source, target in pairs:
            handle.write(f"{_escape(source)}\t{_escape(target)}\n")


def load_training_pairs(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as handle:
        header = handle.readline()
        if header.rstrip("\n") != "input\ttarget":
            raise ValueError(f"{path}: not a training-pair TSV (bad header)")
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            columns = line.split("\t")
            if len(columns) != 2:
                raise ValueError(f"{path}: malformed TSV line: {line[:80]!r}")
            pairs.append((_unescape(columns[0]), _unescape(columns[1])))
    return pairs


def _escape(text: str) -> str:
    return (text.replace("\\", "\\\\").replace("\t", "\\t")
            .replace("\n", "\\n").replace("\r", "\\r"))


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt)
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)
