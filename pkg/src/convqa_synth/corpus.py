"""Document ingestion, sentence splitting, and unit chunking.

Documents come either from a directory of plain ``.txt`` files (filename
becomes the id, parent directory name becomes the domain) or from a JSONL
file with ``id`` / ``domain`` / ``text`` keys. Propositions and sentences
are both handled as retrieval "units"; ``chunk_units`` partitions the
global unit order into the fixed-size sublists that seed dialog generation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import IngestionError, ValidationError

# Tokens that end with a period but do not terminate a sentence.
ABBREVIATIONS = frozenset(
    a.lower()
    for a in (
        "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.",
        "vs.", "e.g.", "i.e.", "etc.", "cf.", "al.", "Inc.", "Ltd.",
        "No.", "U.S.", "U.K.", "a.m.", "p.m.",
    )
)

_TERMINATORS = ".?!"
_CLOSERS = "\"')]"


@dataclass(frozen=True)
class Document:
    """A source text; the unit of ingestion."""

    id: str
    domain: str
    text: str
    source_path: str = ""


@dataclass(frozen=True)
class Proposition:
    """A standalone sentence distilled from a document; the unit of retrieval."""

    id: str
    doc_id: str
    ordinal: int
    text: str


@dataclass(frozen=True)
class UnitSublist:
    """A non-overlapping slice of the global unit order."""

    index: int
    unit_ids: tuple[str, ...]
    size_target: int


class DocumentSet:
    """Immutable collection of documents with unique ids, ordered by id."""

    def __init__(self, documents: Iterable[Document]):
        docs = sorted(documents, key=lambda d: d.id)
        by_id: dict[str, Document] = {}
        for doc in docs:
            if doc.id in by_id:
                raise ValidationError(f"duplicate document id: {doc.id!r}")
            if not doc.text.strip():
                raise ValidationError(f"document {doc.id!r} has empty text")
            by_id[doc.id] = doc
        self._documents = tuple(docs)
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._documents)

    def __getitem__(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    @property
    def documents(self) -> tuple[Document, ...]:
        return self._documents

    def domains(self) -> list[str]:
        return sorted({d.domain for d in self._documents})


class PropositionSet:
    """Proposition repository: unique ids, (doc_id, ordinal) unique, ordered."""

    def __init__(self, propositions: Iterable[Proposition]):
        props = sorted(propositions, key=lambda p: (p.doc_id, p.ordinal))
        by_id: dict[str, Proposition] = {}
        keys: set[tuple[str, int]] = set()
        by_doc: dict[str, list[Proposition]] = {}
        for prop in props:
            if prop.id in by_id:
                raise ValidationError(f"duplicate proposition id: {prop.id!r}")
            key = (prop.doc_id, prop.ordinal)
            if key in keys:
                raise ValidationError(f"duplicate (doc_id, ordinal): {key!r}")
            if not prop.text.strip():
                raise ValidationError(f"proposition {prop.id!r} has empty text")
            by_id[prop.id] = prop
            keys.add(key)
            by_doc.setdefault(prop.doc_id, []).append(prop)
        self._propositions = tuple(props)
        self._by_id = by_id
        self._by_doc = {k: tuple(v) for k, v in by_doc.items()}

    def __len__(self) -> int:
        return len(self._propositions)

    def __iter__(self) -> Iterator[Proposition]:
        return iter(self._propositions)

    def __getitem__(self, prop_id: str) -> Proposition:
        return self._by_id[prop_id]

    def __contains__(self, prop_id: str) -> bool:
        return prop_id in self._by_id

    @property
    def propositions(self) -> tuple[Proposition, ...]:
        return self._propositions

    def for_document(self, doc_id: str) -> tuple[Proposition, ...]:
        return self._by_doc.get(doc_id, ())


def load_documents(path: str | Path, domain_filter: str | None = None) -> DocumentSet:
    """Load documents from a ``.txt`` directory or a JSONL file.

    Directory ingestion walks ``*.txt`` recursively: the filename (sans
    extension) becomes the id and the parent directory name the domain.
    Raises IngestionError for unreadable files and ValidationError for
    duplicate ids or empty texts.
    """
    root = Path(path)
    if not root.exists():
        raise IngestionError(f"no such path: {root}")

    docs: list[Document] = []
    if root.is_dir():
        for file in sorted(root.rglob("*.txt")):
            try:
                text = file.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                raise IngestionError(f"unreadable file {file}: {exc}") from exc
            docs.append(
                Document(id=file.stem, domain=file.parent.name, text=text,
                         source_path=str(file))
            )
    else:
        docs.extend(_read_document_jsonl(root))

    if domain_filter is not None:
        # Validate the full load first so duplicate ids never slip past a filter.
        DocumentSet(docs)
        docs = [d for d in docs if d.domain == domain_filter]
    return DocumentSet(docs)


def _read_document_jsonl(path: Path) -> list[Document]:
    docs = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"unreadable file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            docs.append(
                Document(id=str(record["id"]), domain=str(record["domain"]),
                         text=str(record["text"]), source_path=f"{path}:{lineno}")
            )
        except KeyError as exc:
            raise IngestionError(f"{path}:{lineno}: missing key {exc}") from exc
    return docs


def save_documents(documents: DocumentSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in documents:
            record = {"id": doc.id, "domain": doc.domain, "text": doc.text}
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def load_propositions(path: str | Path,
                      documents: DocumentSet | None = None) -> PropositionSet:
    """Load a proposition JSONL (keys id, doc_id, ordinal, text)."""
    props = []
    source = Path(path)
    try:
        lines = source.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"unreadable file {source}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            props.append(
                Proposition(id=str(record["id"]), doc_id=str(record["doc_id"]),
                            ordinal=int(record["ordinal"]), text=str(record["text"]))
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"{source}:{lineno}: bad proposition record: {exc}") from exc
    repo = PropositionSet(props)
    if documents is not None:
        for prop in repo:
            if prop.doc_id not in documents:
                raise ValidationError(
                    f"proposition {prop.id!r} references unknown document {prop.doc_id!r}")
    return repo


def save_propositions(propositions: Iterable[Proposition], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for prop in propositions:
            record = {"id": prop.id, "doc_id": prop.doc_id,
                      "ordinal": prop.ordinal, "text": prop.text}
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def split_sentences(text: str) -> list[str]:
    """Split text into sentences on ``.?!`` followed by whitespace and an
    uppercase letter or digit, skipping the bundled abbreviation list.

    Falls back to a single sentence when no boundary is found. The
    concatenation of the result equals the input modulo whitespace.
    """
    stripped = text.strip()
    if not stripped:
        return []
    sentences = []
    start = 0
    i = 0
    n = len(stripped)
    while i < n:
        ch = stripped[i]
        if ch in _TERMINATORS:
            end = i + 1
            while end < n and stripped[end] in _CLOSERS:
                end += 1
            j = end
            while j < n and stripped[j].isspace():
                j += 1
            starts_new = j > end and j < n and (stripped[j].isupper() or stripped[j].isdigit())
            if starts_new and not (ch == "." and _ends_with_abbreviation(stripped, i)):
                sentence = stripped[start:end].strip()
                if sentence:
                    sentences.append(sentence)
                start = j
                i = j
                continue
        i += 1
    tail = stripped[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _ends_with_abbreviation(text: str, period_index: int) -> bool:
    begin = period_index
    while begin > 0 and not text[begin - 1].isspace():
        begin -= 1
    token = text[begin : period_index + 1].lower()
    return token in ABBREVIATIONS


def chunk_units(unit_ids: Sequence[str], n: int) -> list[UnitSublist]:
    """Partition `unit_ids` into non-overlapping sublists of size `n`.

    The final sublist keeps the remainder (< n) instead of merging or
    dropping it. Concatenating the sublists in index order reproduces
    the input exactly.
    """
    if n < 1:
        raise ValueError(f"sublist size must be >= 1, got {n}")
    out = []
    for index, offset in enumerate(range(0, len(unit_ids), n)):
        out.append(UnitSublist(index=index,
                               unit_ids=tuple(unit_ids[offset : offset + n]),
                               size_target=n))
    return out


def global_unit_order(propositions: Iterable[Proposition]) -> list[Proposition]:
    """Deterministic global order: (doc_id, ordinal), keeping each
    document's units adjacent."""
    return sorted(propositions, key=lambda p: (p.doc_id, p.ordinal))


def sentence_units(documents: DocumentSet) -> PropositionSet:
    """Sentence-baseline units: each document's sentences as retrieval units."""
    units = []
    for doc in documents:
        for ordinal, sentence in enumerate(split_sentences(doc.text)):
            units.append(Proposition(id=f"{doc.id}:s{ordinal}", doc_id=doc.id,
                                     ordinal=ordinal, text=sentence))
    return PropositionSet(units)
