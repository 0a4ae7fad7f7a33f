from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dialog
from convqa_synth.dialog_synth import DialogSet
from convqa_synth.evaluation import (
    EvalReport,
    SplitSpec,
    average_precision,
    corpus_bleu4,
    corpus_stats,
    evaluate_retrieval,
    recall_at_k,
    render_table,
    sentence_bleu4,
    split_dataset,
    validate_report_ranges,
)
from convqa_synth.retrieval import Bm25Retriever, RankedList, Retriever, ranked
from convqa_synth.rewrite import Formulation
from oracles import oracle_average_precision, oracle_corpus_bleu4, oracle_recall_at_k

# (hypothesis, reference) pairs; expected values frozen from the
# from-definition reference scorer in oracles.py (same tokenizer, no
# smoothing). See also the per-pair sentence scores below.
BLEU_FIXTURE = [
    ("the board appeal form must be faxed to the regional office",
     "the board appeal form must be mailed to the regional office"),
    ("you have one year from the date on your decision to request a board appeal",
     "you have 1 year from the date on your decision to request a board appeal"),
    ("bring the completed form to a regional benefit office",
     "you need to bring your completed va form 10182 to a regional benefit office"),
    ("call the toll free hotline monday through friday",
     "you can also call the va toll free hotline at 800 827 1000 monday through friday"),
    ("apply by mail in person or by fax",
     "you can apply by mail in person or by fax"),
]
BLEU_FIXTURE_CORPUS = 53.69045841425926
BLEU_FIXTURE_PER_PAIR = [
    70.16879391277372,
    82.42367502646054,
    28.80083958905226,
    0.0,
    77.8800783071405,
]


def _dialog_batch(count: int) -> DialogSet:
    return DialogSet(
        make_dialog(f"dlg-{i:05d}", i, [
            ("Hi!", "Hi!", "Hello.", ()),
            (f"Question {i}?", f"Question {i}?", f"Answer {i}.", (f"doc{i}:p0",)),
            ("Thanks!", "Thanks!", "Welcome.", ()),
        ])
        for i in range(count)
    )


class TestSplitDataset:
    def test_sizes_with_floor_rules(self):
        splits = split_dataset(_dialog_batch(10), SplitSpec(seed=1))
        assert (len(splits["train"]), len(splits["val"]), len(splits["test"])) == (6, 2, 2)

    def test_same_seed_identical(self):
        dialogs = _dialog_batch(10)
        first = split_dataset(dialogs, SplitSpec(seed=7))
        second = split_dataset(dialogs, SplitSpec(seed=7))
        for name in ("train", "val", "test"):
            assert [d.id for d in first[name]] == [d.id for d in second[name]]

    def test_different_seeds_differ(self):
        dialogs = _dialog_batch(10)
        ids = lambda s: [d.id for d in s["test"]]  # noqa: E731
        distinct = {tuple(ids(split_dataset(dialogs, SplitSpec(seed=s)))) for s in range(8)}
        assert len(distinct) > 1

    def test_partition(self):
        dialogs = _dialog_batch(11)
        splits = split_dataset(dialogs, SplitSpec(seed=3))
        all_ids = [d.id for s in splits.values() for d in s]
        assert sorted(all_ids) == sorted(d.id for d in dialogs)
        assert len(all_ids) == len(set(all_ids))

    def test_invariant_to_input_order(self):
        dialogs = list(_dialog_batch(10))
        shuffled = list(dialogs)
        random.Random(0).shuffle(shuffled)
        first = split_dataset(dialogs, SplitSpec(seed=5))
        second = split_dataset(shuffled, SplitSpec(seed=5))
        for name in ("train", "val", "test"):
            assert {d.id for d in first[name]} == {d.id for d in second[name]}

    def test_too_few_dialogs(self):
        with pytest.raises(ValueError):
            split_dataset(_dialog_batch(2), SplitSpec(seed=1))

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            SplitSpec(seed=1, train_fraction=1.0)
        with pytest.raises(ValueError):
            SplitSpec(seed=1, val_fraction_of_train=0.0)


class TestAveragePrecision:
    def test_worked_example(self):
        results = RankedList("q", (("r", 3.0), ("x", 2.0), ("r2", 1.0)))
        assert average_precision(results, {"r", "r2"}) == pytest.approx(5.0 / 6.0)

    def test_perfect_ranking(self):
        results = RankedList("q", (("a", 2.0), ("b", 1.0)))
        assert average_precision(results, {"a", "b"}) == 1.0

    def test_nothing_retrieved(self):
        results = RankedList("q", (("x", 2.0), ("y", 1.0)))
        assert average_precision(results, {"a"}) == 0.0

    def test_empty_relevant_rejected(self):
        with pytest.raises(ValueError):
            average_precision(RankedList("q", ()), set())

    def test_random_instances_match_oracle(self):
        rng = random.Random(99)
        for _ in range(200):
            n = rng.randint(1, 50)
            ids = [f"i{j}" for j in range(n)]
            scores = {i: float(n - p) for p, i in enumerate(ids)}
            results = ranked("q", scores)
            population = ids + [f"missing{j}" for j in range(5)]
            relevant = set(rng.sample(population, rng.randint(1, min(8, len(population)))))
            assert average_precision(results, relevant) == pytest.approx(
                oracle_average_precision(results.ids(), relevant))


class TestRecallAtK:
    def test_half(self):
        results = RankedList("q", (("a", 2.0), ("x", 1.0)))
        assert recall_at_k(results, {"a", "b"}, 2) == 0.5

    def test_k_beyond_length(self):
        results = RankedList("q", (("a", 2.0), ("b", 1.0)))
        assert recall_at_k(results, {"a", "b"}, 100) == 1.0

    def test_random_instances_match_oracle(self):
        rng = random.Random(4)
        for _ in range(200):
            n = rng.randint(1, 40)
            ids = [f"i{j}" for j in range(n)]
            results = ranked("q", {i: float(n - p) for p, i in enumerate(ids)})
            relevant = set(rng.sample(ids, rng.randint(1, min(6, n))))
            k = rng.randint(1, 50)
            assert recall_at_k(results, relevant, k) == pytest.approx(
                oracle_recall_at_k(results.ids(), relevant, k))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_non_decreasing_in_k(self, seed):
        rng = random.Random(seed)
        n = rng.randint(1, 30)
        ids = [f"i{j}" for j in range(n)]
        results = ranked("q", {i: float(n - p) for p, i in enumerate(ids)})
        relevant = set(rng.sample(ids, rng.randint(1, n)))
        values = [recall_at_k(results, relevant, k) for k in range(1, n + 5)]
        assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))


class TestBleu:
    def test_identity_is_100(self):
        refs = [r for _, r in BLEU_FIXTURE]
        assert corpus_bleu4(refs, refs) == pytest.approx(100.0)

    def test_zero_overlap_is_0(self):
        assert corpus_bleu4(["aa bb cc dd ee"], ["vv ww xx yy zz"]) == 0.0

    def test_fixture_matches_frozen_reference_values(self):
        hyps = [h for h, _ in BLEU_FIXTURE]
        refs = [r for _, r in BLEU_FIXTURE]
        assert corpus_bleu4(hyps, refs) == pytest.approx(BLEU_FIXTURE_CORPUS, abs=0.1)
        for (h, r), expected in zip(BLEU_FIXTURE, BLEU_FIXTURE_PER_PAIR):
            assert corpus_bleu4([h], [r]) == pytest.approx(expected, abs=0.1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            corpus_bleu4(["a"], ["a", "b"])

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            corpus_bleu4([], [])

    def test_random_instances_match_oracle(self):
        rng = random.Random(12)
        vocab = ["board", "appeal", "form", "mail", "fax", "office", "the", "a", "to"]
        for _ in range(200):
            count = rng.randint(1, 6)
            hyps = [" ".join(rng.choices(vocab, k=rng.randint(0, 15))) for _ in range(count)]
            refs = [" ".join(rng.choices(vocab, k=rng.randint(1, 15))) for _ in range(count)]
            assert corpus_bleu4(hyps, refs) == pytest.approx(
                oracle_corpus_bleu4(hyps, refs), abs=1e-9)

    def test_range(self):
        rng = random.Random(77)
        vocab = ["x", "y", "z", "w"]
        for _ in range(50):
            hyps = [" ".join(rng.choices(vocab, k=rng.randint(1, 10)))]
            refs = [" ".join(rng.choices(vocab, k=rng.randint(1, 10)))]
            assert 0.0 <= corpus_bleu4(hyps, refs) <= 100.0

    def test_sentence_bleu_smoothing_keeps_score_positive(self):
        # shares a 1-gram only; smoothing floors the higher orders
        assert sentence_bleu4("the cat", "the dog sat") > 0.0


class TestCorpusStats:
    def test_pair_count_stats(self):
        dialogs = [
            make_dialog("dlg-00000", 0, [
                ("Hi", "Hi", "Hello.", ())] + [
                (f"Q{i}", f"Q{i}", f"A{i}", ("d:p0",)) for i in range(2)] + [
                ("Bye", "Bye", "Bye.", ())]),
            make_dialog("dlg-00001", 1, [
                ("Hi", "Hi", "Hello.", ())] + [
                (f"Q{i}", f"Q{i}", f"A{i}", ("d:p1",)) for i in range(4)] + [
                ("Bye", "Bye", "Bye.", ())]),
        ]
        stats = corpus_stats(dialogs)
        block = stats["qa_pairs_per_dialog"]
        assert block["mean"] == pytest.approx(5.0)
        assert block["std"] == pytest.approx(1.0)
        assert stats["qa_pairs_per_dialog_excluding_greetings"]["mean"] == pytest.approx(3.0)

    def test_empty_set_gives_absent_markers(self):
        stats = corpus_stats([])
        assert stats["qa_pairs_per_dialog"] is None
        assert stats["grounding_per_pair"] is None


SEPARABLE_KEYWORDS = ["zebra", "quartz", "fjord", "glyph", "plasma", "onyx"]


def separable_fixture() -> tuple[DialogSet, Retriever]:
    """Each question's decontextualized form carries a keyword unique to its
    single grounding proposition, so gold queries separate perfectly. The
    history pair before each keyword question names a different proposition's
    keyword AND its unique case number, so Context queries score that
    distractor strictly above the truth."""
    propositions = [
        (f"doc{i}:p0", f"the {kw} option covers the standard case number {i}")
        for i, kw in enumerate(SEPARABLE_KEYWORDS)
    ]
    count = len(SEPARABLE_KEYWORDS)
    dialogs = []
    for i, kw in enumerate(SEPARABLE_KEYWORDS):
        previous = SEPARABLE_KEYWORDS[(i + 1) % count]
        other = SEPARABLE_KEYWORDS[(i + 2) % count]
        dialogs.append(make_dialog(f"dlg-{i:05d}", i, [
            ("Hello there!", "Hello there!", "Hi, ask away.", ()),
            (f"Tell me about the {previous} option?",
             f"Tell me about the {previous} option?",
             f"The {previous} option covers the standard case number {(i + 1) % count}, "
             f"like the {other} option.",
             (f"doc{(i + 1) % count}:p0",)),
            (f"And what about {kw}?",
             f"What is covered by the {kw} option?",
             f"The {kw} option covers the standard case.",
             (f"doc{i}:p0",)),
            ("Thanks, bye!", "Thanks, bye!", "You are welcome.", ()),
        ]))
    engine = Retriever(bm25=Bm25Retriever().fit(propositions))
    return DialogSet(dialogs), engine


class TestEvaluateRetrieval:
    def test_separable_fixture_is_perfect_with_gold_queries(self):
        dialogs, engine = separable_fixture()
        report = evaluate_retrieval(
            dialogs, Formulation(kind="query_de"), "sparse",
            seeds=[1, 2, 3], engine=engine)
        assert report.map == pytest.approx(1.0)
        assert report.r_at[5] == pytest.approx(1.0)
        validate_report_ranges(report)

    def test_context_strategy_is_strictly_worse(self):
        dialogs, engine = separable_fixture()
        gold = evaluate_retrieval(dialogs, Formulation(kind="query_de"), "sparse",
                                  seeds=[1, 2, 3], engine=engine)
        context = evaluate_retrieval(
            dialogs, Formulation(kind="context", history_pairs=1), "sparse",
            seeds=[1, 2, 3], engine=engine)
        assert context.map < gold.map

    def test_distractor_outranks_truth_per_bm25_oracle(self):
        # the fixture works because history tokens hit distractor
        # propositions: confirm with the independent BM25 scorer
        from convqa_synth.rewrite import formulate
        from oracles import oracle_bm25_scores

        dialogs, engine = separable_fixture()
        propositions = {
            f"doc{i}:p0": f"the {kw} option covers the standard case number {i}"
            for i, kw in enumerate(SEPARABLE_KEYWORDS)
        }
        for dialog in dialogs:
            turn = 2  # the keyword question; history names a distractor
            context_query = formulate(dialog, turn,
                                      Formulation(kind="context", history_pairs=1))
            truth = dialog.pairs[turn].grounding[0]
            distractor = dialog.pairs[turn - 1].grounding[0]
            oracle_scores = oracle_bm25_scores(propositions, context_query, k1=0.05, b=5.0)
            assert oracle_scores[distractor] > oracle_scores[truth] + 1e-6
            engine_scores = dict(
                engine.retrieve("sparse", context_query, k=len(propositions)).entries)
            for item_id, score in engine_scores.items():
                assert score == pytest.approx(oracle_scores[item_id], abs=1e-9)
            assert engine_scores[distractor] > engine_scores[truth]

    def test_per_seed_length(self):
        dialogs, engine = separable_fixture()
        report = evaluate_retrieval(dialogs, Formulation(kind="query_de"), "sparse",
                                    seeds=[1, 2, 3], engine=engine)
        assert len(report.per_seed) == 3
        assert report.n_queries == sum(e["n_queries"] for e in report.per_seed)

    def test_permutation_stable(self):
        dialogs, engine = separable_fixture()
        shuffled = list(dialogs)
        random.Random(8).shuffle(shuffled)
        first = evaluate_retrieval(DialogSet(dialogs), Formulation(kind="query_de"),
                                   "sparse", seeds=[1, 2], engine=engine)
        second = evaluate_retrieval(DialogSet(shuffled), Formulation(kind="query_de"),
                                    "sparse", seeds=[1, 2], engine=engine)
        assert first.map == second.map
        assert first.r_at == second.r_at

    def test_greeting_pairs_excluded_and_counted(self):
        dialogs, engine = separable_fixture()
        report = evaluate_retrieval(dialogs, Formulation(kind="query_de"), "sparse",
                                    seeds=[1], engine=engine)
        # each test dialog has exactly 2 greeting pairs
        test_size = report.excluded_empty_grounding // 2
        assert report.n_queries == test_size * 2


class TestReport:
    def test_table_rendering(self):
        report = EvalReport(strategy="query_de", retriever="rrf", map=0.5,
                            r_at={5: 0.6, 10: 0.7, 20: 0.73}, n_queries=10)
        table = render_table([report])
        lines = table.splitlines()
        assert "MAP" in lines[0] and "R@20" in lines[0]
        assert "query_de" in lines[2]

    def test_range_validation(self):
        report = EvalReport(strategy="s", retriever="r", map=1.5,
                            r_at={5: 0.1, 10: 0.1, 20: 0.1}, n_queries=1)
        with pytest.raises(Exception):
            validate_report_ranges(report)

    def test_to_dict_shape(self):
        report = EvalReport(strategy="query_de", retriever="sparse", map=0.5,
                            r_at={5: 0.6, 10: 0.7, 20: 0.8}, n_queries=4)
        payload = report.to_dict()
        assert set(payload["r_at"]) == {"5", "10", "20"}
        assert payload["averaging"] == "micro-per-query"
