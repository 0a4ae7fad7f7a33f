"""Bundled offline fixture: six demo documents, scripted LLM responses,
and the config they were captured under (see tools/make_fixture.py)."""
from __future__ import annotations

from importlib import resources
from pathlib import Path


def bundled_path(name: str) -> Path:
    """Absolute path of a bundled fixture file (docs.jsonl, responses.jsonl,
    config.toml)."""
    path = resources.files(__name__).joinpath(name)
    return Path(str(path))
