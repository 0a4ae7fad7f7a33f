"""Two-step synthesis of grounded conversational QA dialogs.

Step 1 prompts the LLM to distill each document into propositions. Step 2
runs three prompts per proposition sublist: dialog generation (self-contained
questions), contextualization (history-dependent question variants), and
grounding annotation with an accepted/not_accepted verdict per pair.
Annotator-generated proposition strings are aligned back to repository ids
via a BM25 index scoped to the sublist's source documents, rejected pairs
are filtered out, and each emitted Dialog satisfies referential integrity
over the proposition repository.

Greeting and closing exchanges (the first and last pair of every dialog)
carry empty grounding; everywhere in this package "non-greeting pair" means
a pair with at least one grounding id.
"""
from __future__ import annotations

import json
import logging
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import (
    Document,
    DocumentSet,
    Proposition,
    PropositionSet,
    UnitSublist,
    chunk_units,
    global_unit_order,
    sentence_units,
)
from .errors import StructuredOutputError, ValidationError
from .llm_gateway import CompletionRequest, LlmGateway, extract_structured
from .retrieval import Bm25Params, Bm25Retriever

log = logging.getLogger(__name__)

ACCEPTED = "accepted"
NOT_ACCEPTED = "not_accepted"


@dataclass(frozen=True)
class RawPair:
    user_de: str
    system: str


@dataclass(frozen=True)
class RawDialog:
    """Step-2.1 output: decontextualized question-answer pairs."""

    sublist_index: int
    pairs: tuple[RawPair, ...]

    def __post_init__(self) -> None:
        if len(self.pairs) < 2:
            raise ValidationError("a raw dialog needs at least 2 pairs (greeting and closing)")


@dataclass(frozen=True)
class Annotation:
    """Step-2.3 verdict for one pair."""

    propositions_used: tuple[str, ...]
    evaluation: str


@dataclass(frozen=True)
class DialogPair:
    user_co: str
    user_de: str
    system: str
    grounding: tuple[str, ...]
    accepted: bool = True

    def __post_init__(self) -> None:
        if not self.user_de.strip():
            raise ValidationError("pair has empty decontextualized question")
        object.__setattr__(self, "grounding", tuple(sorted(set(self.grounding))))

    @property
    def requires_rewrite(self) -> bool:
        # Recomputed from the strings, never trusted from upstream.
        return self.user_co != self.user_de

    @property
    def is_greeting(self) -> bool:
        return not self.grounding


@dataclass(frozen=True)
class Dialog:
    id: str
    sublist_index: int
    doc_ids: tuple[str, ...]
    pairs: tuple[DialogPair, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "doc_ids", tuple(sorted(set(self.doc_ids))))

    def non_greeting_pairs(self) -> list[DialogPair]:
        return [p for p in self.pairs if not p.is_greeting]


class DialogSet:
    """Dialogs ordered by sublist index, with unique ids and single-use sublists."""

    def __init__(self, dialogs: Iterable[Dialog]):
        ordered = sorted(dialogs, key=lambda d: d.sublist_index)
        ids: set[str] = set()
        sublists: set[int] = set()
        for dialog in ordered:
            if dialog.id in ids:
                raise ValidationError(f"duplicate dialog id: {dialog.id!r}")
            if dialog.sublist_index in sublists:
                raise ValidationError(
                    f"sublist {dialog.sublist_index} appears in more than one dialog")
            ids.add(dialog.id)
            sublists.add(dialog.sublist_index)
        self._dialogs = tuple(ordered)

    def __len__(self) -> int:
        return len(self._dialogs)

    def __iter__(self) -> Iterator[Dialog]:
        return iter(self._dialogs)

    @property
    def dialogs(self) -> tuple[Dialog, ...]:
        return self._dialogs


def validate_dialog(dialog: Dialog, repo: PropositionSet) -> None:
    """Check every emitted-Dialog invariant against the repository."""
    n = len(dialog.pairs)
    doc_union: set[str] = set()
    for position, pair in enumerate(dialog.pairs):
        if not pair.accepted:
            raise ValidationError(f"dialog {dialog.id}: pair {position} is not accepted")
        if pair.is_greeting and position not in (0, n - 1):
            raise ValidationError(
                f"dialog {dialog.id}: pair {position} has empty grounding but is not "
                "a greeting/closing pair")
        for prop_id in pair.grounding:
            if prop_id not in repo:
                raise ValidationError(
                    f"dialog {dialog.id}: grounding id {prop_id!r} not in repository")
            doc_union.add(repo[prop_id].doc_id)
    if set(dialog.doc_ids) != doc_union:
        raise ValidationError(
            f"dialog {dialog.id}: doc_ids {dialog.doc_ids} != grounding docs {sorted(doc_union)}")


@dataclass
class SynthesisConfig:
    n: int = 30
    units: str = "propositions"  # or "sentences" for the sentence baseline
    retries: int = 2  # per-prompt retry budget before flagging the item
    max_tokens: int = 2048
    bm25: Bm25Params = field(default_factory=Bm25Params)
    sublist_seed: int | None = None  # shuffles sublist *use order* only
    parallelism: int = 4


class SynthesisPipeline:
    """Drives Step 1 and Step 2 against a configured gateway."""

    def __init__(self, gateway: LlmGateway, config: SynthesisConfig | None = None):
        self.gateway = gateway
        self.config = config or SynthesisConfig()

    # -- step 1 ---------------------------------------------------------

    def generate_propositions(self, doc: Document) -> list[Proposition]:
        """Extract propositions for one document.

        An empty list is a valid outcome (document judged uninformative).
        Raises StructuredOutputError after the retry budget is exhausted.
        """
        value = self._complete_parsed(
            "step1_propositions", {"text": doc.text}, self._parse_proposition_list)
        props = []
        seen: set[str] = set()
        for text in value:
            trimmed = text.strip()
            if not trimmed or trimmed in seen:
                continue
            seen.add(trimmed)
            ordinal = len(props)
            props.append(Proposition(id=f"{doc.id}:p{ordinal}", doc_id=doc.id,
                                     ordinal=ordinal, text=trimmed))
        return props

    @staticmethod
    def _parse_proposition_list(value) -> list[str]:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ValidationError("step-1 completion is not a JSON list of strings")
        return value

    # -- step 2 ---------------------------------------------------------

    def generate_dialog(self, sublist: UnitSublist, repo: PropositionSet) -> RawDialog:
        if not sublist.unit_ids:
            raise ValidationError("cannot generate a dialog from an empty sublist")
        bindings = {"propositions": self._propositions_json(sublist, repo)}
        value = self._complete_parsed("p2_1_dialog", bindings, self._parse_dialog_pairs)
        return RawDialog(sublist_index=sublist.index, pairs=tuple(value))

    @staticmethod
    def _parse_dialog_pairs(value) -> list[RawPair]:
        if not isinstance(value, dict):
            raise ValidationError("dialog completion is not a JSON object")
        pairs = []
        for position in range(len(value)):
            key = str(position)
            if key not in value:
                raise ValidationError(f"dialog completion missing key {key!r}")
            entry = value[key]
            if not isinstance(entry, dict):
                raise ValidationError(f"dialog pair {key!r} is not an object")
            user = entry.get("<user>")
            system = entry.get("<system>")
            if not isinstance(user, str) or not user.strip():
                raise ValidationError(f"dialog pair {key!r} has no <user> question")
            if not isinstance(system, str) or not system.strip():
                raise ValidationError(f"dialog pair {key!r} has no <system> answer")
            pairs.append(RawPair(user_de=user.strip(), system=system.strip()))
        if len(pairs) < 2:
            raise ValidationError("dialog completion has fewer than 2 pairs")
        return pairs

    def contextualize(self, raw: RawDialog) -> list[str]:
        """Step 2.2: one contextualized question per pair, positionally aligned."""
        bindings = {"dialog": self._dialog_json(raw)}
        value = self._complete_parsed(
            "p2_2_contextualize", bindings,
            lambda v: self._parse_contextualized(v, expected=len(raw.pairs)))
        return value

    @staticmethod
    def _parse_contextualized(value, expected: int) -> list[str]:
        if not isinstance(value, dict):
            raise ValidationError("contextualization completion is not a JSON object")
        if len(value) != expected:
            raise ValidationError(
                f"contextualization returned {len(value)} pairs, expected {expected}")
        out = []
        for position in range(expected):
            entry = value.get(str(position))
            if not isinstance(entry, dict):
                raise ValidationError(f"contextualization missing pair {position}")
            question = entry.get("<contextualized user>")
            if not isinstance(question, str) or not question.strip():
                raise ValidationError(
                    f"contextualization pair {position} has no <contextualized user>")
            out.append(question.strip())
        return out

    def annotate_grounding(self, sublist: UnitSublist, raw: RawDialog,
                           repo: PropositionSet) -> list[Annotation]:
        """Step 2.3: per-pair grounding propositions and accept/reject verdict.

        Unknown or missing evaluation tokens are treated as not_accepted with
        a warning; the first and last pairs are always forced to accepted.
        """
        bindings = {
            "propositions": self._propositions_json(sublist, repo),
            "pairs": self._dialog_json(raw),
        }
        value = self._complete_parsed(
            "p2_3_ground", bindings,
            lambda v: self._parse_annotations(v, expected=len(raw.pairs)))
        out = []
        last = len(value) - 1
        for position, annotation in enumerate(value):
            evaluation = annotation.evaluation
            if position in (0, last):
                evaluation = ACCEPTED
            out.append(Annotation(propositions_used=annotation.propositions_used,
                                  evaluation=evaluation))
        return out

    @staticmethod
    def _parse_annotations(value, expected: int) -> list[Annotation]:
        if not isinstance(value, dict):
            raise ValidationError("annotation completion is not a JSON object")
        out = []
        for position in range(expected):
            entry = value.get(str(position))
            if not isinstance(entry, dict):
                raise ValidationError(f"annotation completion missing pair {position}")
            used = entry.get("propositions_used", [])
            if isinstance(used, str):
                used = [used]
            if not isinstance(used, list) or not all(isinstance(u, str) for u in used):
                raise ValidationError(f"annotation pair {position}: bad propositions_used")
            evaluation = entry.get("evaluation")
            if evaluation not in (ACCEPTED, NOT_ACCEPTED):
                log.warning("annotation pair %d: unknown evaluation %r, treating as %s",
                            position, evaluation, NOT_ACCEPTED)
                evaluation = NOT_ACCEPTED
            out.append(Annotation(
                propositions_used=tuple(u.strip() for u in used if u.strip()),
                evaluation=evaluation))
        return out

    # -- alignment and filtering ----------------------------------------

    def alignment_index(self, sublist: UnitSublist, repo: PropositionSet) -> Bm25Retriever:
        """BM25 index scoped to the sublist's source documents (not the whole
        repository): the closest match is sought among the propositions the
        dialog could have been generated from."""
        doc_ids = sorted({repo[uid].doc_id for uid in sublist.unit_ids})
        items = [(p.id, p.text) for doc_id in doc_ids for p in repo.for_document(doc_id)]
        return Bm25Retriever(k1=self.config.bm25.k1, b=self.config.bm25.b).fit(items)

    def align_propositions(self, generated: Sequence[str],
                           repo_index: Bm25Retriever) -> list[str]:
        """Map each generated proposition string to its top-1 BM25 match.

        Strings with zero vocabulary overlap are omitted with a warning;
        duplicates collapse later when the grounding set is built.
        """
        aligned = []
        for text in generated:
            hits = repo_index.query(text, k=1)
            if not hits.entries:
                log.warning("no BM25 match for generated proposition %r; omitting", text)
                continue
            aligned.append(hits.entries[0][0])
        return aligned

    def filter_dialog(self, raw: RawDialog, user_cos: Sequence[str],
                      annotations: Sequence[Annotation],
                      aligned_grounding: Sequence[Sequence[str]],
                      repo: PropositionSet) -> Dialog | None:
        """Assemble the final Dialog: drop rejected pairs and decontextualize
        the survivor immediately following each removal point.

        Greeting/closing pairs keep empty grounding. A middle pair whose
        grounding emptied out during alignment is dropped like a rejected
        pair. Returns None when nothing survives.
        """
        n = len(raw.pairs)
        if not (len(user_cos) == len(annotations) == len(aligned_grounding) == n):
            raise ValidationError("filter inputs are not positionally aligned")
        pairs = []
        prev_removed = False
        for position in range(n):
            is_edge = position in (0, n - 1)
            grounding = () if is_edge else tuple(sorted(set(aligned_grounding[position])))
            accepted = annotations[position].evaluation == ACCEPTED
            if accepted and not is_edge and not grounding:
                log.warning("pair %d lost all grounding during alignment; dropping", position)
                accepted = False
            if not accepted:
                prev_removed = True
                continue
            user_co = user_cos[position]
            if prev_removed:
                user_co = raw.pairs[position].user_de
            pairs.append(DialogPair(
                user_co=user_co,
                user_de=raw.pairs[position].user_de,
                system=raw.pairs[position].system,
                grounding=grounding,
            ))
            prev_removed = False
        if not pairs:
            return None
        doc_ids = sorted({repo[prop_id].doc_id for pair in pairs for prop_id in pair.grounding})
        return Dialog(
            id=f"dlg-{raw.sublist_index:05d}",
            sublist_index=raw.sublist_index,
            doc_ids=tuple(doc_ids),
            pairs=tuple(pairs),
        )

    # -- full pipeline ---------------------------------------------------

    def synthesize_corpus(
        self, documents: DocumentSet
    ) -> tuple[DialogSet, PropositionSet, dict]:
        """Run Step 1, chunking, and Step 2 end to end.

        Per-item failures are isolated and reported; each sublist is
        consumed at most once. Returns (dialogs, proposition repository,
        synthesis report).
        """
        config = self.config
        skipped_docs: list[str] = []
        failed_docs: list[str] = []
        propositions: list[Proposition] = []

        if config.units == "sentences":
            repo = sentence_units(documents)
        elif config.units == "propositions":
            docs = list(documents)
            with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
                results = list(pool.map(self._propose_one, docs))
            for doc, (props, error) in zip(docs, results):
                if error is not None:
                    failed_docs.append(doc.id)
                elif not props:
                    skipped_docs.append(doc.id)
                else:
                    propositions.extend(props)
            repo = PropositionSet(propositions)
        else:
            raise ValueError(f"unknown unit kind {config.units!r}")

        order = [p.id for p in global_unit_order(repo)]
        sublists = chunk_units(order, config.n)
        use_order = list(sublists)
        if config.sublist_seed is not None:
            random.Random(config.sublist_seed).shuffle(use_order)

        used: set[int] = set()
        failed_sublists: list[int] = []
        dropped_sublists: list[int] = []
        dialogs: list[Dialog] = []
        with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
            results = list(pool.map(lambda sl: self._synthesize_one(sl, repo), use_order))
        for sublist, (dialog, error) in zip(use_order, results):
            if sublist.index in used:
                raise ValidationError(f"sublist {sublist.index} consumed twice in one run")
            used.add(sublist.index)
            if error is not None:
                failed_sublists.append(sublist.index)
            elif dialog is None:
                dropped_sublists.append(sublist.index)
            else:
                dialogs.append(dialog)

        dialog_set = DialogSet(dialogs)
        for dialog in dialog_set:
            validate_dialog(dialog, repo)
        report = self._build_report(
            documents, repo, dialog_set,
            skipped_docs=skipped_docs, failed_docs=failed_docs,
            n_sublists=len(sublists), failed_sublists=failed_sublists,
            dropped_sublists=dropped_sublists)
        return dialog_set, repo, report

    def _propose_one(self, doc: Document):
        try:
            return self.generate_propositions(doc), None
        except (StructuredOutputError, ValidationError) as exc:
            log.warning("document %s flagged proposition_failed: %s", doc.id, exc)
            return [], exc

    def _synthesize_one(self, sublist: UnitSublist, repo: PropositionSet):
        try:
            raw = self.generate_dialog(sublist, repo)
            user_cos = self.contextualize(raw)
            annotations = self.annotate_grounding(sublist, raw, repo)
            index = self.alignment_index(sublist, repo)
            groundings = [self.align_propositions(a.propositions_used, index)
                          for a in annotations]
            return self.filter_dialog(raw, user_cos, annotations, groundings, repo), None
        except (StructuredOutputError, ValidationError) as exc:
            log.warning("sublist %d flagged dialog_failed: %s", sublist.index, exc)
            return None, exc

    # -- helpers ---------------------------------------------------------

    def _complete_parsed(self, template_name: str, bindings: dict, parse):
        request = CompletionRequest(
            template_name=template_name, bindings=bindings,
            max_tokens=self.config.max_tokens, temperature=0.0)
        last_error: Exception = StructuredOutputError("no attempt made")
        for _ in range(self.config.retries + 1):
            text = self.gateway.complete(request)
            try:
                return parse(extract_structured(text))
            except (StructuredOutputError, ValidationError) as exc:
                last_error = exc
        raise last_error

    def _propositions_json(self, sublist: UnitSublist, repo: PropositionSet) -> str:
        return json.dumps([repo[uid].text for uid in sublist.unit_ids], ensure_ascii=False)

    @staticmethod
    def _dialog_json(raw: RawDialog) -> str:
        return json.dumps(
            {str(i): {"<user>": p.user_de, "<system>": p.system}
             for i, p in enumerate(raw.pairs)},
            ensure_ascii=False)

    def _build_report(self, documents, repo, dialog_set, *, skipped_docs, failed_docs,
                      n_sublists, failed_sublists, dropped_sublists) -> dict:
        content_pairs = [p for d in dialog_set for p in d.non_greeting_pairs()]
        all_pairs = [p for d in dialog_set for p in d.pairs]
        rewrite_flags = [p.requires_rewrite for p in content_pairs]
        return {
            "documents": {
                "total": len(documents),
                "skipped": sorted(skipped_docs),
                "proposition_failed": sorted(failed_docs),
            },
            "propositions": len(repo),
            "sublists": {
                "total": n_sublists,
                "dialog_failed": sorted(failed_sublists),
                "dropped_all_pairs": sorted(dropped_sublists),
            },
            "dialogs": len(dialog_set),
            "pairs": {
                "total": len(all_pairs),
                "non_greeting": len(content_pairs),
            },
            "requires_rewrite_fraction": (
                sum(rewrite_flags) / len(rewrite_flags) if rewrite_flags else None),
            "mean_grounding_size": (
                statistics.mean(len(p.grounding) for p in content_pairs)
                if content_pairs else None),
            "mean_docs_per_dialog": (
                statistics.mean(len(d.doc_ids) for d in dialog_set)
                if len(dialog_set) else None),
            "stats": compute_corpus_stats(dialog_set, documents, repo),
        }


def compute_corpus_stats(dialogs: Iterable[Dialog], documents: DocumentSet | None,
                         propositions: PropositionSet | None) -> dict:
    """Mean and population standard deviation of document length (words),
    proposition length (words), QA pairs per dialog (with and without the
    greeting/closing exchanges), and grounding propositions per pair.

    Empty inputs yield None markers rather than zeros.
    """
    dialogs = list(dialogs)

    def block(values: list) -> dict | None:
        if not values:
            return None
        return {
            "mean": float(statistics.mean(values)),
            "std": float(statistics.pstdev(values)),
            "count": len(values),
        }

    return {
        "document_length_words": block(
            [len(d.text.split()) for d in documents] if documents is not None else []),
        "proposition_length_words": block(
            [len(p.text.split()) for p in propositions] if propositions is not None else []),
        "qa_pairs_per_dialog": block([len(d.pairs) for d in dialogs]),
        "qa_pairs_per_dialog_excluding_greetings": block(
            [len(d.non_greeting_pairs()) for d in dialogs]),
        "grounding_per_pair": block(
            [len(p.grounding) for d in dialogs for p in d.non_greeting_pairs()]),
    }


def save_dialogs(dialogs: Iterable[Dialog], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for dialog in dialogs:
            record = {
                "id": dialog.id,
                "sublist_index": dialog.sublist_index,
                "doc_ids": list(dialog.doc_ids),
                "pairs": [
                    {
                        "user_co": p.user_co,
                        "user_de": p.user_de,
                        "system": p.system,
                        "grounding": list(p.grounding),
                        "requires_rewrite": p.requires_rewrite,
                    }
                    for p in dialog.pairs
                ],
            }
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def load_dialogs(path: str | Path, repo: PropositionSet | None = None) -> DialogSet:
    """Load a dialog JSONL; requires_rewrite is recomputed, never trusted."""
    dialogs = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            pairs = tuple(
                DialogPair(
                    user_co=p["user_co"], user_de=p["user_de"], system=p["system"],
                    grounding=tuple(p.get("grounding", ())))
                for p in record["pairs"]
            )
            dialogs.append(Dialog(
                id=str(record["id"]), sublist_index=int(record["sublist_index"]),
                doc_ids=tuple(record.get("doc_ids", ())), pairs=pairs))
    dialog_set = DialogSet(dialogs)
    if repo is not None:
        for dialog in dialog_set:
            validate_dialog(dialog, repo)
    return dialog_set
