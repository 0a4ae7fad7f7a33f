from __future__ import annotations

import json
import math

import pytest
import torch
from torch import nn

from conftest import write_retriever_fixture, write_rewriter_fixture
from convqa_trainer.data import DataError, load_retriever_pairs, load_rewriter_pairs
from convqa_trainer.training import (
    TrainSpec,
    _Logger,
    _run_schedule,
    load_artifact,
    train_rewriter,
)
from convqa_trainer.vocab import Vocab


class TestTrainSpecDefaults:
    def test_rewriter_defaults(self):
        spec = TrainSpec(task="rewriter")
        assert spec.batch_size == 8
        assert spec.lr == 1e-4
        assert spec.max_epochs == 100
        assert spec.patience == 15
        assert spec.lr_drop_after == 10
        assert spec.lr_drop_factor == 0.1
        assert spec.val_fraction == 0.25

    def test_retriever_defaults(self):
        spec = TrainSpec(task="retriever")
        assert spec.batch_size == 16
        assert spec.lr == 1e-5

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            TrainSpec(task="ranker")


class TestData:
    def test_tsv_round_trip(self, rewriter_fixture_path):
        pairs = load_rewriter_pairs(rewriter_fixture_path)
        assert len(pairs) == 200
        targets = [t for _, t in pairs]
        assert sum(t == "no_rewrite" for t in targets) >= 160
        assert all(t == "no_rewrite" or t.startswith("rewrite ") for t in targets)

    def test_malformed_target_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("input\ttarget\nsome input\tmaybe rewrite this\n")
        with pytest.raises(DataError, match="bad.tsv:2"):
            load_rewriter_pairs(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\tb\n")
        with pytest.raises(DataError, match=":1"):
            load_rewriter_pairs(path)

    def test_retriever_pairs_use_history_convention(self, tmp_path):
        dialogs, propositions = tmp_path / "d.jsonl", tmp_path / "p.jsonl"
        write_retriever_fixture(dialogs, propositions, pair_count=3)
        pairs = load_retriever_pairs(dialogs, propositions, history_pairs=1)
        assert len(pairs) == 3
        query, positive = pairs[0]
        # history (greeting pair) precedes the contextualized question
        assert query.startswith("hello there hi, ask away ")
        assert query.endswith("what does policy number 0 cover?")
        assert positive == "the parking policy number 0 covers the standard case"

    def test_ungrounded_dialog_skipped_with_warning(self, tmp_path, caplog):
        dialogs, propositions = tmp_path / "d.jsonl", tmp_path / "p.jsonl"
        write_retriever_fixture(dialogs, propositions, pair_count=2)
        with open(dialogs, "a", encoding="utf-8") as handle:
            handle.write(json.dumps({
                "id": "dlg-xx", "sublist_index": 99, "doc_ids": [],
                "pairs": [
                    {"user_co": "hi", "user_de": "hi", "system": "hello",
                     "grounding": []},
                    {"user_co": "bye", "user_de": "bye", "system": "bye",
                     "grounding": []},
                ]}) + "\n")
        with caplog.at_level("WARNING"):
            pairs = load_retriever_pairs(dialogs, propositions)
        assert len(pairs) == 2
        assert any("dlg-xx" in message for message in caplog.messages)

    def test_unknown_grounding_id(self, tmp_path):
        dialogs, propositions = tmp_path / "d.jsonl", tmp_path / "p.jsonl"
        write_retriever_fixture(dialogs, propositions, pair_count=1)
        propositions.write_text("")  # drop the repository
        with pytest.raises(DataError, match="doc00:p0"):
            load_retriever_pairs(dialogs, propositions)


class _ScriptedModel(nn.Module):
    def __init__(self):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(1))


def _scripted_schedule(val_losses: list[float], spec: TrainSpec, tmp_path):
    model = _ScriptedModel()
    logger = _Logger(tmp_path / "log.jsonl")
    iterator = iter(val_losses)

    def epoch_fn(optimizer):
        return 0.0

    def val_fn():
        return next(iterator)

    best_state, result = _run_schedule(model, spec, epoch_fn, val_fn, logger)
    entries = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    return result, entries


class TestScheduleMechanics:
    def test_lr_drop_value_for_rewriter(self, tmp_path):
        # improvement, then stagnation long enough to drop and stop
        losses = [1.0, 0.5] + [0.6] * 20
        spec = TrainSpec(task="rewriter", max_epochs=30)
        result, entries = _scripted_schedule(losses, spec, tmp_path)
        drops = [e for e in entries if e["event"] == "lr_drop"]
        assert len(drops) == 1
        assert drops[0]["from"] == pytest.approx(1e-4)
        assert drops[0]["to"] == pytest.approx(1e-5)
        assert result.stopped_early is True
        assert result.epochs_run == 2 + 15  # patience exhausted
        assert result.best_val_loss == 0.5

    def test_lr_drop_value_for_retriever(self, tmp_path):
        losses = [1.0] + [1.1] * 20
        spec = TrainSpec(task="retriever", max_epochs=30)
        _, entries = _scripted_schedule(losses, spec, tmp_path)
        drops = [e for e in entries if e["event"] == "lr_drop"]
        assert drops[0]["from"] == pytest.approx(1e-5)
        assert drops[0]["to"] == pytest.approx(1e-6)

    def test_lr_drops_only_once(self, tmp_path):
        # two stagnation streaks; the schedule holds the reduced rate
        losses = [1.0] + [1.1] * 10 + [0.5] + [0.6] * 20
        spec = TrainSpec(task="rewriter", max_epochs=60)
        result, entries = _scripted_schedule(losses, spec, tmp_path)
        assert len([e for e in entries if e["event"] == "lr_drop"]) == 1

    def test_sub_min_delta_improvement_does_not_reset_patience(self, tmp_path):
        losses = [1.0] + [1.0 - 1e-6 * i for i in range(1, 20)]
        spec = TrainSpec(task="rewriter", max_epochs=40)
        result, _ = _scripted_schedule(losses, spec, tmp_path)
        assert result.stopped_early is True
        assert result.epochs_run == 16

    def test_runs_to_max_epochs_when_improving(self, tmp_path):
        losses = [1.0 / (i + 1) for i in range(10)]
        spec = TrainSpec(task="rewriter", max_epochs=10)
        result, entries = _scripted_schedule(losses, spec, tmp_path)
        assert result.stopped_early is False
        assert result.epochs_run == 10
        assert [e for e in entries if e["event"] == "early_stop"] == []


class TestRewriterTraining:
    def test_full_run_stops_early_with_one_lr_drop(self, trained_rewriter):
        result = trained_rewriter
        assert result.stopped_early is True
        assert result.epochs_run < 100
        assert len(result.lr_drops) == 1
        assert result.lr_drops[0]["from"] == pytest.approx(1e-4)
        assert result.lr_drops[0]["to"] == pytest.approx(1e-5)

    def test_best_so_far_val_loss_is_monotone(self, trained_rewriter):
        log_path = trained_rewriter.artifact_dir / "training_log.jsonl"
        best = [json.loads(line)["best_val_loss"]
                for line in log_path.read_text().splitlines()
                if json.loads(line).get("event") == "epoch"]
        assert all(b <= a + 1e-12 for a, b in zip(best, best[1:]))
        assert best[-1] < best[0]

    def test_log_records_spec(self, trained_rewriter):
        log_path = trained_rewriter.artifact_dir / "training_log.jsonl"
        start = json.loads(log_path.read_text().splitlines()[0])
        assert start["event"] == "start"
        assert start["spec"]["batch_size"] == 8
        assert start["spec"]["lr"] == 1e-4
        assert start["spec"]["optimizer"] == "adamw"

    def test_artifact_reloads(self, trained_rewriter):
        model, vocab, meta = load_artifact(trained_rewriter.artifact_dir)
        assert meta["role"] == "rewriter"
        assert "no_rewrite" in vocab.stoi
        assert not model.training  # inference mode

    def test_quick_run_saves_artifact(self, tmp_path):
        path = tmp_path / "tiny.tsv"
        write_rewriter_fixture(path, count=24)
        result = train_rewriter(path, tmp_path / "artifact",
                                TrainSpec(task="rewriter", max_epochs=2))
        assert (result.artifact_dir / "model.pt").exists()
        assert (result.artifact_dir / "vocab.json").exists()
        assert (result.artifact_dir / "meta.json").exists()


class TestRetrieverTraining:
    def test_smoke_run_completes(self, trained_retriever):
        result = trained_retriever
        assert (result.artifact_dir / "model.pt").exists()
        assert result.epochs_run >= 1
        assert math.isfinite(result.best_val_loss)

    def test_embeddings_are_normalized(self, trained_retriever):
        from convqa_trainer.serving import EmbedderService

        service = EmbedderService(trained_retriever.artifact_dir)
        vectors = service.embed(["what does the parking policy cover?"])
        norm = sum(v * v for v in vectors[0]) ** 0.5
        assert norm == pytest.approx(1.0, abs=1e-5)

    def test_query_matches_its_positive(self, trained_retriever):
        from convqa_trainer.serving import EmbedderService

        service = EmbedderService(trained_retriever.artifact_dir)
        query = "hello there hi, ask away what does policy number 3 cover?"
        candidates = [
            "the appeal policy number 3 covers the standard case",
            "the refund policy number 5 covers the standard case",
            "the roaming policy number 9 covers the standard case",
        ]
        vectors = service.embed([query] + candidates)

        def dot(u, v):
            return sum(a * b for a, b in zip(u, v))

        scores = [dot(vectors[0], v) for v in vectors[1:]]
        assert scores[0] == max(scores)


class TestVocab:
    def test_round_trip(self, tmp_path):
        vocab = Vocab.build(["alpha beta gamma", "beta beta delta"])
        path = tmp_path / "vocab.json"
        vocab.save(path)
        reloaded = Vocab.load(path)
        assert reloaded.stoi == vocab.stoi

    def test_unknown_tokens(self):
        vocab = Vocab.build(["alpha beta"])
        ids = vocab.encode("alpha zulu")
        assert vocab.decode(ids) == "alpha <unk>"
