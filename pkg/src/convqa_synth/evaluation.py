"""Seeded splits, retrieval metrics (MAP, R@k), corpus BLEU-4, and
end-to-end evaluation of formulation strategy x retriever combinations.

Headline metrics are micro-averaged per query within each seed's test
split, then averaged (unweighted) over seeds.
"""
from __future__ import annotations

import logging
import math
import random
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import DocumentSet, PropositionSet
from .dialog_synth import Dialog, DialogSet, compute_corpus_stats
from .errors import ValidationError
from .retrieval import RankedList, Retriever, tokenize
from .rewrite import Formulation, RewriterClient, formulate

log = logging.getLogger(__name__)

RECALL_CUTOFFS = (5, 10, 20)


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_fraction: float = 0.8
    val_fraction_of_train: float = 0.25

    def __post_init__(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must be in (0,1), got {self.train_fraction}")
        if not 0 < self.val_fraction_of_train < 1:
            raise ValueError(
                f"val_fraction_of_train must be in (0,1), got {self.val_fraction_of_train}")


def split_dataset(dialogs: DialogSet | Sequence[Dialog],
                  spec: SplitSpec) -> dict[str, DialogSet]:
    """Partition dialogs into train/val/test at dialog granularity.

    Deterministic given the seed and invariant to input ordering: the
    shuffle keys on sorted dialog ids. Train count is floored, then the
    val count is floored within the train block; remainders go to test
    and train respectively.
    """
    dialogs = list(dialogs)
    if len(dialogs) < 3:
        raise ValueError(f"need at least 3 dialogs to split, got {len(dialogs)}")
    by_id = {d.id: d for d in dialogs}
    ids = sorted(by_id)
    random.Random(spec.seed).shuffle(ids)
    n_train_block = math.floor(spec.train_fraction * len(ids))
    n_val = math.floor(spec.val_fraction_of_train * n_train_block)
    train_block, test_ids = ids[:n_train_block], ids[n_train_block:]
    val_ids, train_ids = train_block[:n_val], train_block[n_val:]
    return {
        "train": DialogSet(by_id[i] for i in train_ids),
        "val": DialogSet(by_id[i] for i in val_ids),
        "test": DialogSet(by_id[i] for i in test_ids),
    }


def average_precision(ranked: RankedList, relevant: set[str]) -> float:
    """AP = (1/|relevant|) * sum of precision@p at each relevant position p.

    Unretrieved relevant items contribute zero.
    """
    if not relevant:
        raise ValueError("average_precision is undefined for an empty relevant set")
    hits = 0
    total = 0.0
    for position, (item_id, _) in enumerate(ranked.entries, start=1):
        if item_id in relevant:
            hits += 1
            total += hits / position
    return total / len(relevant)


def recall_at_k(ranked: RankedList, relevant: set[str], k: int) -> float:
    """|top-k intersect relevant| / |relevant|."""
    if not relevant:
        raise ValueError("recall is undefined for an empty relevant set")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    top = {item_id for item_id, _ in ranked.entries[:k]}
    return len(top & relevant) / len(relevant)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu4(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus-level BLEU with n-gram orders 1-4, one reference per hypothesis.

    Geometric mean of modified (clipped) precisions times the brevity
    penalty, scaled to [0, 100]. No smoothing: any zero precision gives 0.
    Tokenization matches the retrieval tokenizer.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"got {len(hypotheses)} hypotheses for {len(references)} references")
    if not references:
        raise ValueError("corpus_bleu4 needs at least one hypothesis/reference pair")
    clipped = [0] * 4
    totals = [0] * 4
    hyp_length = 0
    ref_length = 0
    for hypothesis, reference in zip(hypotheses, references):
        hyp_tokens = tokenize(hypothesis)
        ref_tokens = tokenize(reference)
        hyp_length += len(hyp_tokens)
        ref_length += len(ref_tokens)
        for order in range(1, 5):
            hyp_counts = _ngrams(hyp_tokens, order)
            ref_counts = _ngrams(ref_tokens, order)
            totals[order - 1] += sum(hyp_counts.values())
            clipped[order - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
    if hyp_length == 0 or any(t == 0 for t in totals) or any(c == 0 for c in clipped):
        return 0.0
    log_precision = sum(math.log(c / t) for c, t in zip(clipped, totals)) / 4.0
    brevity = 1.0 if hyp_length > ref_length else math.exp(1.0 - ref_length / hyp_length)
    return 100.0 * brevity * math.exp(log_precision)


def sentence_bleu4(hypothesis: str, reference: str, epsilon: float = 1e-9) -> float:
    """Sentence-level BLEU-4 with an epsilon numerator floor on each precision."""
    hyp_tokens = tokenize(hypothesis)
    ref_tokens = tokenize(reference)
    if not hyp_tokens:
        return 0.0
    log_sum = 0.0
    for order in range(1, 5):
        hyp_counts = _ngrams(hyp_tokens, order)
        ref_counts = _ngrams(ref_tokens, order)
        total = sum(hyp_counts.values())
        if total == 0:
            matched = epsilon
            total = 1
        else:
            matched = max(
                sum(min(c, ref_counts[g]) for g, c in hyp_counts.items()), epsilon)
        log_sum += math.log(matched / total)
    brevity = (1.0 if len(hyp_tokens) > len(ref_tokens)
               else math.exp(1.0 - len(ref_tokens) / len(hyp_tokens)))
    return 100.0 * brevity * math.exp(log_sum / 4.0)


@dataclass
class EvalReport:
    strategy: str
    retriever: str
    map: float
    r_at: dict[int, float]
    n_queries: int
    bleu: float | None = None
    per_seed: list[dict] = field(default_factory=list)
    excluded_empty_grounding: int = 0
    averaging: str = "micro-per-query"

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "retriever": self.retriever,
            "averaging": self.averaging,
            "map": self.map,
            "r_at": {str(k): v for k, v in sorted(self.r_at.items())},
            "bleu": self.bleu,
            "n_queries": self.n_queries,
            "excluded_empty_grounding": self.excluded_empty_grounding,
            "per_seed": self.per_seed,
        }


def evaluate_retrieval(
    dialogs: DialogSet,
    strategy: Formulation,
    retriever_name: str,
    seeds: Sequence[int],
    engine: Retriever,
    top_k: int = 20,
    split: SplitSpec | None = None,
    rewriter: RewriterClient | None = None,
) -> EvalReport:
    """MAP and R@{5,10,20} for one (strategy, retriever) configuration.

    Each seed splits the dialogs, evaluates every non-greeting pair of the
    test split against its grounding set, and micro-averages; the headline
    numbers are unweighted means over seeds. Pairs with empty grounding
    are excluded and counted.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    per_seed = []
    excluded_total = 0
    for seed in seeds:
        spec = SplitSpec(seed=seed) if split is None else SplitSpec(
            seed=seed, train_fraction=split.train_fraction,
            val_fraction_of_train=split.val_fraction_of_train)
        test = split_dataset(dialogs, spec)["test"]
        aps: list[float] = []
        recalls: dict[int, list[float]] = {k: [] for k in RECALL_CUTOFFS}
        excluded = 0
        for dialog in test:
            for turn_index, pair in enumerate(dialog.pairs):
                if pair.is_greeting:
                    excluded += 1
                    continue
                query = formulate(dialog, turn_index, strategy, rewriter)
                results = engine.retrieve(retriever_name, query, k=top_k,
                                          query_id=f"{dialog.id}:{turn_index}")
                relevant = set(pair.grounding)
                aps.append(average_precision(results, relevant))
                for cutoff in RECALL_CUTOFFS:
                    recalls[cutoff].append(recall_at_k(results, relevant, cutoff))
        if not aps:
            log.warning("seed %d: no evaluable queries in the test split", seed)
        per_seed.append({
            "seed": seed,
            "map": statistics.mean(aps) if aps else 0.0,
            "r_at": {str(k): (statistics.mean(v) if v else 0.0)
                     for k, v in recalls.items()},
            "n_queries": len(aps),
        })
        excluded_total += excluded
    headline_map = statistics.mean(entry["map"] for entry in per_seed)
    headline_r = {
        cutoff: statistics.mean(entry["r_at"][str(cutoff)] for entry in per_seed)
        for cutoff in RECALL_CUTOFFS
    }
    return EvalReport(
        strategy=strategy.kind,
        retriever=retriever_name,
        map=headline_map,
        r_at=headline_r,
        n_queries=sum(entry["n_queries"] for entry in per_seed),
        per_seed=per_seed,
        excluded_empty_grounding=excluded_total,
    )


def corpus_stats(dialogs: DialogSet | Iterable[Dialog],
                 documents: DocumentSet | None = None,
                 propositions: PropositionSet | None = None) -> dict:
    """Descriptive statistics of a dialog corpus (population std)."""
    return compute_corpus_stats(dialogs, documents, propositions)


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table of evaluation results, one row per report."""
    header = ["Strategy", "Retriever", "MAP"] + [f"R@{k}" for k in RECALL_CUTOFFS]
    if any(r.bleu is not None for r in reports):
        header.append("BLEU")
    rows = [header]
    for report in reports:
        row = [report.strategy, report.retriever, f"{report.map:.3f}"]
        row += [f"{report.r_at[k]:.3f}" for k in RECALL_CUTOFFS]
        if "BLEU" in header:
            row.append("n/a" if report.bleu is None else f"{report.bleu:.2f}")
        rows.append(row)
    widths = [max(len(row[col]) for row in rows) for col in range(len(header))]
    lines = []
    for index, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines)


def validate_report_ranges(report: EvalReport) -> None:
    """All retrieval metrics in [0,1]; BLEU in [0,100]."""
    values = [report.map, *report.r_at.values()]
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ValidationError("retrieval metric out of [0,1]")
    if report.bleu is not None and not 0.0 <= report.bleu <= 100.0:
        raise ValidationError("BLEU out of [0,100]")
