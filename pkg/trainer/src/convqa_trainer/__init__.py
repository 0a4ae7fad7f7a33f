"""Fine-tune and serve the lightweight conditional question rewriter and
bi-encoder retriever for the dialog-synthesis pipeline."""
from __future__ import annotations

from .data import load_retriever_pairs, load_rewriter_pairs
from .serving import create_app, serve
from .training import TrainResult, TrainSpec, load_artifact, train_retriever, train_rewriter
from .vocab import Vocab

__version__ = "0.1.0"

__all__ = [
    "TrainResult",
    "TrainSpec",
    "Vocab",
    "create_app",
    "load_artifact",
    "load_retriever_pairs",
    "load_rewriter_pairs",
    "serve",
    "train_retriever",
    "train_rewriter",
]
