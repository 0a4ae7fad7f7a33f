from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from convqa_trainer.training import TrainSpec, train_retriever, train_rewriter

TOPICS = ["parking", "billing", "renewal", "appeal", "transfer", "refund",
          "enrollment", "shipping", "warranty", "roaming"]
ACTIONS = ["request", "cancel", "submit", "track", "update"]


def _escape(text: str) -> str:
    return (text.replace("\\", "\\\\").replace("\t", "\\t")
            .replace("\n", "\\n").replace("\r", "\\r"))


def write_rewriter_fixture(path: Path, count: int = 200,
                           rewrite_fraction: float = 0.2, seed: int = 5) -> None:
    """Synthetic conditional-rewrite pairs; >=80% no_rewrite targets.

    Each example carries a unique case number so held-out examples contain
    unseen tokens: validation loss bottoms out and training exhibits the
    stagnation the lr schedule and early stopping react to.
    """
    rng = random.Random(seed)
    rows = []
    n_rewrite = int(count * rewrite_fraction)
    for i in range(count):
        topic = rng.choice(TOPICS)
        action = rng.choice(ACTIONS)
        case = 1000 + i
        history = (f"what is the {topic} policy for case {case}? "
                   f"the {topic} policy covers case {case}.")
        if i < n_rewrite:
            contextualized = f"how do i {action} it for case {case}?"
            decontextualized = f"how do i {action} the {topic} policy for case {case}?"
            rows.append((f"{history} {contextualized}", f"rewrite {decontextualized}"))
        else:
            question = f"how do i {action} the {topic} policy for case {case}?"
            rows.append((f"{history} {question}", "no_rewrite"))
    rng.shuffle(rows)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("input\ttarget\n")
        for source, target in rows:
            handle.write(f"{_escape(source)}\t{_escape(target)}\n")


def self_contained_question(index: int, rng: random.Random) -> str:
    topic = rng.choice(TOPICS)
    action = rng.choice(ACTIONS)
    case = 5000 + index
    return (f"what is the {topic} policy for case {case}? "
            f"the {topic} policy covers case {case}. "
            f"how do i {action} the {topic} policy for case {case}?")


def write_retriever_fixture(dialogs_path: Path, propositions_path: Path,
                            pair_count: int = 50) -> None:
    """Dialog + proposition JSONL with `pair_count` grounded pairs."""
    propositions = []
    dialogs = []
    for i in range(pair_count):
        topic = TOPICS[i % len(TOPICS)]
        prop_id = f"doc{i:02d}:p0"
        propositions.append({
            "id": prop_id, "doc_id": f"doc{i:02d}", "ordinal": 0,
            "text": f"the {topic} policy number {i} covers the standard case",
        })
        dialogs.append({
            "id": f"dlg-{i:05d}", "sublist_index": i, "doc_ids": [f"doc{i:02d}"],
            "pairs": [
                {"user_co": "hello there", "user_de": "hello there",
                 "system": "hi, ask away", "grounding": [],
                 "requires_rewrite": False},
                {"user_co": f"what does policy number {i} cover?",
                 "user_de": f"what does the {topic} policy number {i} cover?",
                 "system": f"the {topic} policy number {i} covers the standard case",
                 "grounding": [prop_id], "requires_rewrite": True},
                {"user_co": "thanks", "user_de": "thanks",
                 "system": "welcome", "grounding": [], "requires_rewrite": False},
            ],
        })
    with open(propositions_path, "w", encoding="utf-8") as handle:
        for record in propositions:
            handle.write(json.dumps(record) + "\n")
    with open(dialogs_path, "w", encoding="utf-8") as handle:
        for record in dialogs:
            handle.write(json.dumps(record) + "\n")


@pytest.fixture(scope="session")
def rewriter_fixture_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "pairs.tsv"
    write_rewriter_fixture(path)
    return path


@pytest.fixture(scope="session")
def trained_rewriter(rewriter_fixture_path, tmp_path_factory):
    """The flagship training run: full protocol defaults on the 200-pair
    fixture. Shared across tests; takes about a minute on CPU."""
    out_dir = tmp_path_factory.mktemp("artifacts") / "rewriter"
    result = train_rewriter(rewriter_fixture_path, out_dir, TrainSpec(task="rewriter"))
    return result


@pytest.fixture(scope="session")
def retriever_fixture_paths(tmp_path_factory) -> tuple[Path, Path]:
    data_dir = tmp_path_factory.mktemp("retriever_data")
    dialogs = data_dir / "dialogs.jsonl"
    propositions = data_dir / "propositions.jsonl"
    write_retriever_fixture(dialogs, propositions)
    return dialogs, propositions


@pytest.fixture(scope="session")
def trained_retriever(retriever_fixture_paths, tmp_path_factory):
    """Bi-encoder smoke artifact: protocol batch size and learning rate,
    epoch budget shortened for test runtime."""
    dialogs, propositions = retriever_fixture_paths
    out_dir = tmp_path_factory.mktemp("artifacts") / "retriever"
    spec = TrainSpec(task="retriever", max_epochs=6)
    result = train_retriever(dialogs, propositions, out_dir, spec)
    return result
