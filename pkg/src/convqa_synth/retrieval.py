"""Sparse, dense, and fused retrieval over the proposition repository.

`Bm25Retriever` and `DenseRetriever` follow the sklearn estimator protocol
(`fit` builds the immutable index, `get_params`/`set_params` come from
BaseEstimator, unfitted queries raise NotFittedError) so they compose with
the wider ecosystem. `rrf_fuse` combines two ranked lists by reciprocal
rank, and `Retriever` dispatches a query string to a configured strategy.

BM25 scoring uses the nonnegative-idf variant:

    idf(t)        = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(t, d)   = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))

summed over the distinct query terms. Defaults k1=0.05, b=5 are the tuned
values this harness evaluates with; b > 1 is unconventional but accepted
as given, and both parameters are configurable per index.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import StateError, ValidationError
from .llm_gateway import EmbeddingVector

DEFAULT_K1 = 0.05
DEFAULT_B = 5.0
DEFAULT_RRF_K = 60
DEFAULT_RRF_DEPTH = 100
DEFAULT_TOP_K = 20

_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased Unicode-alphanumeric word tokens; hyphens and underscores
    separate. No stopword removal."""
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self) -> None:
        if not (math.isfinite(self.k1) and math.isfinite(self.b)):
            raise ValueError("BM25 parameters must be finite")
        if self.k1 < 0 or self.b < 0:
            raise ValueError("BM25 parameters must be >= 0")


@dataclass(frozen=True)
class RankedList:
    """Retrieval results ordered by non-increasing score, ties broken by
    ascending item id."""

    query_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        ids = [item_id for item_id, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValidationError("ranked list contains duplicate item ids")
        for (id_a, score_a), (id_b, score_b) in zip(self.entries, self.entries[1:]):
            if score_b > score_a or (score_b == score_a and id_b < id_a):
                raise ValidationError("ranked list is not sorted by (-score, id)")

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [item_id for item_id, _ in self.entries]


def ranked(query_id: str, scores: dict[str, float], k: int | None = None) -> RankedList:
    """Build a RankedList from an id->score map with deterministic tie-breaks."""
    ordered = sorted(scores.items(), key=lambda entry: (-entry[1], entry[0]))
    if k is not None:
        ordered = ordered[:k]
    return RankedList(query_id=query_id, entries=tuple(ordered))


def _check_items(items: Sequence[tuple[str, object]]) -> None:
    if not items:
        raise ValidationError("cannot build an index over an empty corpus")
    seen: set[str] = set()
    for item_id, _ in items:
        if item_id in seen:
            raise ValidationError(f"duplicate item id: {item_id!r}")
        seen.add(item_id)


class Bm25Retriever(BaseEstimator):
    """Okapi BM25 over an inverted index.

    fit() takes (id, text) pairs and is idempotent for identical input;
    the fitted index is immutable and safe for concurrent queries.
    """

    def __init__(self, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.k1 = k1
        self.b = b

    @property
    def params(self) -> Bm25Params:
        return Bm25Params(k1=self.k1, b=self.b)

    def fit(self, items: Sequence[tuple[str, str]], y=None) -> "Bm25Retriever":
        self.params  # validates k1/b
        _check_items(items)
        postings: dict[str, list[tuple[str, int]]] = {}
        doc_lengths: dict[str, int] = {}
        for item_id, text in sorted(items, key=lambda item: item[0]):
            tokens = tokenize(text)
            doc_lengths[item_id] = len(tokens)
            for term, term_freq in Counter(tokens).items():
                postings.setdefault(term, []).append((item_id, term_freq))
        for plist in postings.values():
            plist.sort(key=lambda entry: entry[0])
        self.postings_ = postings
        self.doc_lengths_ = doc_lengths
        self.n_docs_ = len(doc_lengths)
        self.avg_doc_length_ = sum(doc_lengths.values()) / len(doc_lengths)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "postings_"):
            raise NotFittedError("Bm25Retriever is not fitted; call fit() first")

    def idf(self, term: str) -> float:
        self._check_fitted()
        df = len(self.postings_.get(term, ()))
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.n_docs_ - df + 0.5) / (df + 0.5))

    def query(self, query: str, k: int = DEFAULT_TOP_K, query_id: str = "") -> RankedList:
        """Top-k items by BM25 score. Items with no query-term overlap score
        exactly 0 and never appear in the result."""
        self._check_fitted()
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        scores: dict[str, float] = {}
        for term in set(tokenize(query)):
            plist = self.postings_.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for item_id, term_freq in plist:
                dl = self.doc_lengths_[item_id]
                norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_length_)
                scores[item_id] = scores.get(item_id, 0.0) + (
                    idf * term_freq * (self.k1 + 1.0) / (term_freq + norm)
                )
        scores = {item_id: score for item_id, score in scores.items() if score != 0.0}
        return ranked(query_id or query, scores, k)

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "version": "bm25/1",
            "params": {"k1": self.k1, "b": self.b},
            "postings": {
                term: [[item_id, tf] for item_id, tf in plist]
                for term, plist in self.postings_.items()
            },
            "doc_lengths": self.doc_lengths_,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Bm25Retriever":
        if payload.get("version") != "bm25/1":
            raise ValidationError(f"unsupported BM25 snapshot version: {payload.get('version')!r}")
        index = cls(k1=payload["params"]["k1"], b=payload["params"]["b"])
        index.postings_ = {
            term: [(item_id, int(tf)) for item_id, tf in plist]
            for term, plist in payload["postings"].items()
        }
        index.doc_lengths_ = {k: int(v) for k, v in payload["doc_lengths"].items()}
        index.n_docs_ = len(index.doc_lengths_)
        index.avg_doc_length_ = sum(index.doc_lengths_.values()) / len(index.doc_lengths_)
        return index

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Bm25Retriever":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class DenseRetriever(BaseEstimator):
    """Exhaustive cosine-similarity scan over item embeddings.

    Exact (not approximate): repositories here are ~10^4 propositions.
    """

    def fit(
        self,
        items: Sequence[tuple[str, EmbeddingVector | Sequence[float]]],
        y=None,
    ) -> "DenseRetriever":
        _check_items(items)
        rows = []
        ids = []
        for item_id, vector in sorted(items, key=lambda item: item[0]):
            values = np.asarray(
                vector.values if isinstance(vector, EmbeddingVector) else vector, dtype=float
            )
            if values.ndim != 1 or values.size == 0:
                raise ValidationError(f"item {item_id!r}: vector must be 1-d and non-empty")
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"item {item_id!r}: vector has non-finite values")
            if np.linalg.norm(values) == 0:
                raise ValidationError(f"item {item_id!r}: zero-norm vector")
            rows.append(values)
            ids.append(item_id)
        dims = {row.size for row in rows}
        if len(dims) > 1:
            raise ValidationError(f"vectors have mixed dims: {sorted(dims)}")
        self.ids_ = tuple(ids)
        self.matrix_ = np.vstack(rows)
        self.norms_ = np.linalg.norm(self.matrix_, axis=1)
        self.dim_ = self.matrix_.shape[1]
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "matrix_"):
            raise NotFittedError("DenseRetriever is not fitted; call fit() first")

    def query(
        self,
        query_vector: EmbeddingVector | Sequence[float],
        k: int = DEFAULT_TOP_K,
        query_id: str = "",
    ) -> RankedList:
        self._check_fitted()
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        values = np.asarray(
            query_vector.values if isinstance(query_vector, EmbeddingVector) else query_vector,
            dtype=float,
        )
        if values.ndim != 1 or values.size != self.dim_:
            raise ValueError(f"query vector dim {values.size} != index dim {self.dim_}")
        norm = np.linalg.norm(values)
        if norm == 0:
            raise ValueError("query vector has zero norm")
        cosines = (self.matrix_ @ values) / (self.norms_ * norm)
        scores = {item_id: float(score) for item_id, score in zip(self.ids_, cosines)}
        return ranked(query_id, scores, k)

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "version": "dense/1",
            "dim": self.dim_,
            "vectors": {
                item_id: [float(v) for v in row]
                for item_id, row in zip(self.ids_, self.matrix_)
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DenseRetriever":
        if payload.get("version") != "dense/1":
            raise ValidationError(f"unsupported dense snapshot version: {payload.get('version')!r}")
        return cls().fit(sorted(payload["vectors"].items()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "DenseRetriever":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_vectors_jsonl(path: str | Path) -> list[tuple[str, list[float]]]:
    """Precomputed-embedding import: JSONL of {id, vector:[real]}."""
    items = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            items.append((str(record["id"]), [float(v) for v in record["vector"]]))
    return items


def rrf_fuse(
    a: RankedList,
    b: RankedList,
    k_rrf: int = DEFAULT_RRF_K,
    depth: int | None = None,
) -> RankedList:
    """Reciprocal rank fusion: score(i) = 1/(rank_a(i)+k) + 1/(rank_b(i)+k).

    Ranks are 1-based list positions. An item present in only one list
    receives only that list's reciprocal term (no penalty rank for the
    other). Output is truncated to `depth` when given.
    """
    if k_rrf < 1:
        raise ValueError(f"k_rrf must be >= 1, got {k_rrf}")
    scores: dict[str, float] = {}
    for ranked_list in (a, b):
        for position, (item_id, _) in enumerate(ranked_list.entries, start=1):
            scores[item_id] = scores.get(item_id, 0.0) + 1.0 / (position + k_rrf)
    return ranked(a.query_id or b.query_id, scores, depth)


class Retriever:
    """Strategy dispatcher over built indexes.

    For `rrf`, both underlying lists are retrieved at `rrf_depth` before
    fusion and the fused list is truncated to k.
    """

    STRATEGIES = ("sparse", "dense", "rrf")

    def __init__(
        self,
        bm25: Bm25Retriever | None = None,
        dense: DenseRetriever | None = None,
        embed_query: Callable[[str], Sequence[float]] | None = None,
        rrf_k: int = DEFAULT_RRF_K,
        rrf_depth: int = DEFAULT_RRF_DEPTH,
    ):
        self.bm25 = bm25
        self.dense = dense
        self.embed_query = embed_query
        self.rrf_k = rrf_k
        self.rrf_depth = rrf_depth

    def retrieve(self, strategy: str, query: str, k: int = DEFAULT_TOP_K,
                 query_id: str = "") -> RankedList:
        if strategy == "sparse":
            return self._sparse(query, k, query_id)
        if strategy == "dense":
            return self._dense(query, k, query_id)
        if strategy == "rrf":
            sparse = self._sparse(query, self.rrf_depth, query_id)
            dense = self._dense(query, self.rrf_depth, query_id)
            fused = rrf_fuse(sparse, dense, k_rrf=self.rrf_k, depth=k)
            return RankedList(query_id=query_id, entries=fused.entries)
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {self.STRATEGIES}")

    def _sparse(self, query: str, k: int, query_id: str) -> RankedList:
        if self.bm25 is None:
            raise StateError("sparse retrieval requires a built BM25 index")
        return self.bm25.query(query, k=k, query_id=query_id)

    def _dense(self, query: str, k: int, query_id: str) -> RankedList:
        if self.dense is None:
            raise StateError("dense retrieval requires a built dense index")
        if self.embed_query is None:
            raise StateError("dense retrieval requires an embedding backend")
        return self.dense.query(self.embed_query(query), k=k, query_id=query_id)
