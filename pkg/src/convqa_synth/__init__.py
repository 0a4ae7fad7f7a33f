"""Document-grounded conversational QA: synthetic dialog generation plus
sparse/dense/fused retrieval evaluation over a proposition repository."""
from __future__ import annotations

from .corpus import (
    Document,
    DocumentSet,
    Proposition,
    PropositionSet,
    UnitSublist,
    chunk_units,
    load_documents,
    load_propositions,
    split_sentences,
)
from .dialog_synth import (
    Dialog,
    DialogPair,
    DialogSet,
    RawDialog,
    SynthesisConfig,
    SynthesisPipeline,
    load_dialogs,
    save_dialogs,
)
from .evaluation import (
    EvalReport,
    SplitSpec,
    average_precision,
    corpus_bleu4,
    corpus_stats,
    evaluate_retrieval,
    recall_at_k,
    split_dataset,
)
from .llm_gateway import (
    CompletionRequest,
    EmbeddingVector,
    LlmGateway,
    MockChatBackend,
    MockEmbeddingBackend,
    extract_structured,
    fingerprint,
    render_prompt,
)
from .retrieval import (
    Bm25Params,
    Bm25Retriever,
    DenseRetriever,
    RankedList,
    Retriever,
    rrf_fuse,
    tokenize,
)
from .rewrite import (
    Formulation,
    RewriteResult,
    conditional_rewrite,
    formulate,
    make_rewriter_training_pairs,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
