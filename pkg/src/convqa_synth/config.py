"""Run configuration: TOML-style config files with CLI-flag overrides.

Precedence, highest first: explicit CLI flag, config file entry, environment
variable (secrets only: LLM_API_KEY, LLM_BASE_URL, EMBED_BASE_URL), default.
The parser covers the TOML subset these configs need: ``[sections]``,
strings, ints, floats, booleans, flat arrays, and ``#`` comments.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import DataError
from .retrieval import Bm25Params

ENV_API_KEY = "LLM_API_KEY"
ENV_LLM_BASE_URL = "LLM_BASE_URL"
ENV_EMBED_BASE_URL = "EMBED_BASE_URL"


@dataclass
class Paths:
    documents: str = "artifacts/documents.jsonl"
    propositions: str = "artifacts/propositions.jsonl"
    dialogs: str = "artifacts/dialogs.jsonl"
    indexes: str = "artifacts/indexes"
    reports: str = "artifacts/reports"
    fixtures: str = ""
    vectors: str = ""
    audit_log: str = ""


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    n: int = 30
    units: str = "propositions"
    bm25: Bm25Params = field(default_factory=Bm25Params)
    rrf_k: int = 60
    rrf_depth: int = 100
    top_k: int = 20
    history_h: int = 1
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    backend: str = "mock"
    llm_base_url: str = ""
    embed_base_url: str = ""
    llm_api_key: str = ""
    llm_model: str = "default"
    rewriter_endpoint: str = ""
    retries: int = 2
    parallelism: int = 4
    max_tokens: int = 2048
    mock_embedding_dim: int = 32
    sublist_seed: int | None = None


_PATH_KEYS = {f.name for f in fields(Paths)}
_INT_KEYS = {"n", "rrf_k", "rrf_depth", "top_k", "history_h", "retries",
             "parallelism", "max_tokens", "mock_embedding_dim", "sublist_seed"}
_STR_KEYS = {"units", "backend", "llm_base_url", "embed_base_url", "llm_api_key",
             "llm_model", "rewriter_endpoint"}


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, env secrets, a config file, and
    explicit overrides (CLI flags), in increasing precedence."""
    config = RunConfig()
    config.llm_api_key = os.environ.get(ENV_API_KEY, "")
    config.llm_base_url = os.environ.get(ENV_LLM_BASE_URL, "")
    config.embed_base_url = os.environ.get(ENV_EMBED_BASE_URL, "")
    if path is not None:
        _apply(config, parse_toml_subset(Path(path).read_text(encoding="utf-8"),
                                         source=str(path)))
    if overrides:
        _apply(config, {k: v for k, v in overrides.items() if v is not None})
    return config


def _apply(config: RunConfig, entries: dict) -> None:
    for key, value in entries.items():
        if key.startswith("paths."):
            name = key.split(".", 1)[1]
            if name not in _PATH_KEYS:
                raise DataError(f"unknown config key {key!r}")
            setattr(config.paths, name, str(value))
        elif key in _PATH_KEYS:
            setattr(config.paths, key, str(value))
        elif key == "bm25.k1" or key == "k1":
            config.bm25 = Bm25Params(k1=float(value), b=config.bm25.b)
        elif key == "bm25.b" or key == "b":
            config.bm25 = Bm25Params(k1=config.bm25.k1, b=float(value))
        elif key == "seeds":
            config.seeds = [int(v) for v in value]
        elif key in _INT_KEYS:
            setattr(config, key, int(value))
        elif key in _STR_KEYS:
            setattr(config, key, str(value))
        else:
            raise DataError(f"unknown config key {key!r}")


def parse_toml_subset(text: str, source: str = "<config>") -> dict:
    """Parse the supported TOML subset into a flat dict with dotted keys."""
    entries: dict = {}
    section = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise DataError(f"{source}:{lineno}: malformed section header")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected key = value")
        key, _, rest = line.partition("=")
        key = key.strip()
        if not key:
            raise DataError(f"{source}:{lineno}: empty key")
        try:
            value, remainder = _parse_value(rest.strip())
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from exc
        if remainder and not remainder.lstrip().startswith("#"):
            raise DataError(f"{source}:{lineno}: trailing content {remainder!r}")
        entries[f"{section}.{key}" if section else key] = value
    return entries


def _parse_value(text: str):
    if not text:
        raise ValueError("missing value")
    if text[0] == '"':
        out = []
        i = 1
        while i < len(text):
            ch = text[i]
            if ch == "\\" and i + 1 < len(text):
                out.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(
                    text[i + 1], text[i + 1]))
                i += 2
                continue
            if ch == '"':
                return "".join(out), text[i + 1:]
            out.append(ch)
            i += 1
        raise ValueError("unterminated string")
    if text[0] == "[":
        values = []
        rest = text[1:].lstrip()
        while True:
            if not rest:
                raise ValueError("unterminated array")
            if rest[0] == "]":
                return values, rest[1:]
            value, rest = _parse_value(rest)
            values.append(value)
            rest = rest.lstrip()
            if rest.startswith(","):
                rest = rest[1:].lstrip()
    token = ""
    for ch in text:
        if ch in " \t,]#":
            break
        token += ch
    rest = text[len(token):]
    if token == "true":
        return True, rest
    if token == "false":
        return False, rest
    try:
        return int(token), rest
    except ValueError:
        pass
    try:
        return float(token), rest
    except ValueError:
        raise ValueError(f"cannot parse value {token!r}") from None
