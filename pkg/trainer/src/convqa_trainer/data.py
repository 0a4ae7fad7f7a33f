"""Training-data loading: the rewriter TSV and the dialog/proposition JSONL
files produced by the synthesis pipeline.

The TSV columns are `input` and `target` with backslash-escaped control
characters; targets must be `no_rewrite` or start with `rewrite `. Retriever
pairs are (last-question-plus-history, grounding proposition text), matching
the convention the pipeline uses at inference.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

log = logging.getLogger(__name__)

REWRITE_PREFIX = "rewrite "
NO_REWRITE = "no_rewrite"


class DataError(ValueError):
    """A data file has malformed content (names the offending line)."""


def load_rewriter_pairs(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n")
        if header != "input\ttarget":
            raise DataError(f"{path}:1: expected header 'input\\ttarget', got {header!r}")
        for lineno, line in enumerate(handle, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            columns = line.split("\t")
            if len(columns) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(columns)}")
            source, target = (_unescape(c) for c in columns)
            if target != NO_REWRITE and not target.startswith(REWRITE_PREFIX):
                raise DataError(
                    f"{path}:{lineno}: target must be 'no_rewrite' or start with "
                    f"'rewrite ', got {target[:40]!r}")
            pairs.append((source, target))
    if not pairs:
        raise DataError(f"{path}: no training pairs")
    return pairs


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(text[i + 1])
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(text[i])
        i += 1
    return "".join(out)


def load_retriever_pairs(dialogs_path: str | Path,
                         propositions_path: str | Path,
                         history_pairs: int = 1) -> list[tuple[str, str]]:
    """(query-with-history, positive proposition text) pairs from dialog JSONL.

    Dialogs without any grounded pair are skipped with a warning. A pair
    grounded in several propositions yields one training pair per
    proposition.
    """
    propositions: dict[str, str] = {}
    with open(propositions_path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                record = json.loads(line)
                propositions[record["id"]] = record["text"]
    pairs = []
    with open(dialogs_path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            dialog = json.loads(line)
            turns = dialog["pairs"]
            grounded = [t for t in turns if t.get("grounding")]
            if not grounded:
                log.warning("dialog %s has no grounded pair; skipped", dialog.get("id"))
                continue
            for index, turn in enumerate(turns):
                grounding = turn.get("grounding") or []
                if not grounding:
                    continue
                history = []
                for prev in turns[max(0, index - history_pairs):index]:
                    history.append(prev["user_co"])
                    history.append(prev["system"])
                query = " ".join(history + [turn["user_co"]])
                for prop_id in grounding:
                    if prop_id not in propositions:
                        raise DataError(
                            f"{dialogs_path}: grounding id {prop_id!r} not in "
                            f"{propositions_path}")
                    pairs.append((query, propositions[prop_id]))
    if not pairs:
        raise DataError(f"{dialogs_path}: no grounded pairs to train on")
    return pairs
