"""Training loops: conditional question rewriter and bi-encoder retriever.

Both tasks share the schedule: train up to `max_epochs`, evaluate on the
held-out validation split once per epoch, keep the best checkpoint by
validation loss, multiply the learning rate by `lr_drop_factor` when no
improvement has been seen for `lr_drop_after` consecutive evaluations, and
stop early after `patience` stagnant evaluations. Every epoch and schedule
event is appended to training_log.jsonl inside the artifact directory.
"""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .data import load_retriever_pairs, load_rewriter_pairs
from .models import BiEncoder, Seq2SeqRewriter, encode_batch
from .vocab import Vocab

log = logging.getLogger(__name__)


@dataclass
class TrainSpec:
    task: str  # rewriter | retriever
    batch_size: int | None = None  # defaults: rewriter 8, retriever 16
    max_epochs: int = 100
    patience: int = 15
    lr: float | None = None  # defaults: rewriter 1e-4, retriever 1e-5
    lr_drop_after: int = 10
    lr_drop_factor: float = 0.1
    val_fraction: float = 0.25
    # unstated in the protocol; conventional defaults, recorded in the log
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    min_delta: float = 1e-4  # improvement below this does not reset patience
    max_len: int = 160
    seed: int = 13
    d_model: int = 96
    num_layers: int = 2
    nhead: int = 4
    dim_feedforward: int = 192
    dropout: float = 0.1
    history_pairs: int = 1  # retriever query convention
    temperature: float = 0.05  # contrastive softmax temperature

    def __post_init__(self) -> None:
        if self.task not in ("rewriter", "retriever"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.batch_size is None:
            self.batch_size = 8 if self.task == "rewriter" else 16
        if self.lr is None:
            self.lr = 1e-4 if self.task == "rewriter" else 1e-5


@dataclass
class TrainResult:
    artifact_dir: Path
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    lr_drops: list[dict] = field(default_factory=list)
    stopped_early: bool = False


class _Logger:
    def __init__(self, path: Path):
        self.path = path
        self.path.write_text("", encoding="utf-8")

    def write(self, entry: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


def _split(pairs: list, val_fraction: float, seed: int) -> tuple[list, list]:
    indexes = list(range(len(pairs)))
    random.Random(seed).shuffle(indexes)
    n_val = max(1, int(len(pairs) * val_fraction))
    val = [pairs[i] for i in indexes[:n_val]]
    train = [pairs[i] for i in indexes[n_val:]]
    if not train:
        raise ValueError("not enough pairs to form a training split")
    return train, val


def _run_schedule(model: nn.Module, spec: TrainSpec, epoch_fn, val_fn,
                  logger: _Logger) -> tuple[dict, TrainResult]:
    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.lr,
                                  weight_decay=spec.weight_decay)
    best_val = math.inf  # strict tracker; selects the checkpoint
    significant_best = math.inf  # min_delta tracker; drives the schedule
    best_state: dict = {}
    best_epoch = 0
    stagnant = 0
    lr_drops: list[dict] = []
    epochs_run = 0
    stopped_early = False
    for epoch in range(1, spec.max_epochs + 1):
        epochs_run = epoch
        model.train()
        train_loss = epoch_fn(optimizer)
        model.eval()
        with torch.no_grad():
            val_loss = val_fn()
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if val_loss < significant_best - spec.min_delta:
            significant_best = val_loss
            stagnant = 0
        else:
            stagnant += 1
        current_lr = optimizer.param_groups[0]["lr"]
        logger.write({
            "event": "epoch", "epoch": epoch, "train_loss": round(train_loss, 6),
            "val_loss": round(val_loss, 6), "lr": current_lr,
            "best_val_loss": round(best_val, 6), "stagnant_evals": stagnant,
        })
        if stagnant == spec.lr_drop_after and not lr_drops:
            # the schedule reduces the learning rate once, by lr_drop_factor
            new_lr = current_lr * spec.lr_drop_factor
            for group in optimizer.param_groups:
                group["lr"] = new_lr
            drop = {"event": "lr_drop", "epoch": epoch, "from": current_lr, "to": new_lr}
            lr_drops.append(drop)
            logger.write(drop)
            log.info("lr dropped %.2g -> %.2g after %d stagnant evaluations",
                     current_lr, new_lr, stagnant)
        if stagnant >= spec.patience:
            stopped_early = True
            logger.write({"event": "early_stop", "epoch": epoch,
                          "stagnant_evals": stagnant})
            break
    result = TrainResult(artifact_dir=Path(), epochs_run=epochs_run,
                         best_epoch=best_epoch, best_val_loss=best_val,
                         lr_drops=lr_drops, stopped_early=stopped_early)
    return best_state, result


def train_rewriter(pairs_path: str | Path, out_dir: str | Path,
                   spec: TrainSpec | None = None) -> TrainResult:
    """Fine-tune the conditional rewriter on a training-pair TSV."""
    spec = spec or TrainSpec(task="rewriter")
    torch.manual_seed(spec.seed)
    pairs = load_rewriter_pairs(pairs_path)
    train_pairs, val_pairs = _split(pairs, spec.val_fraction, spec.seed)
    vocab = Vocab.build([s for s, _ in train_pairs] + [t for _, t in train_pairs])
    model = Seq2SeqRewriter(len(vocab), d_model=spec.d_model, nhead=spec.nhead,
                            num_layers=spec.num_layers,
                            dim_feedforward=spec.dim_feedforward,
                            dropout=spec.dropout, max_len=spec.max_len)
    loss_fn = nn.CrossEntropyLoss(ignore_index=0)

    def batch_loss(batch: list[tuple[str, str]]) -> torch.Tensor:
        src = encode_batch(vocab, [s for s, _ in batch], spec.max_len)
        tgt = encode_batch(vocab, [t for _, t in batch], spec.max_len,
                           bos=True, eos=True)
        logits = model(src, tgt[:, :-1])
        return loss_fn(logits.reshape(-1, logits.size(-1)), tgt[:, 1:].reshape(-1))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger = _Logger(out_dir / "training_log.jsonl")
    logger.write({"event": "start", "task": "rewriter", "pairs": len(pairs),
                  "train": len(train_pairs), "val": len(val_pairs),
                  "spec": asdict(spec)})
    rng = random.Random(spec.seed + 1)

    def epoch_fn(optimizer) -> float:
        order = list(range(len(train_pairs)))
        rng.shuffle(order)
        total = 0.0
        batches = 0
        for start in range(0, len(order), spec.batch_size):
            batch = [train_pairs[i] for i in order[start : start + spec.batch_size]]
            optimizer.zero_grad()
            loss = batch_loss(batch)
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        return total / max(1, batches)

    def val_fn() -> float:
        total = 0.0
        batches = 0
        for start in range(0, len(val_pairs), spec.batch_size):
            total += float(batch_loss(val_pairs[start : start + spec.batch_size]))
            batches += 1
        return total / max(1, batches)

    best_state, result = _run_schedule(model, spec, epoch_fn, val_fn, logger)
    model.load_state_dict(best_state)
    _save_artifact(out_dir, model, vocab, spec, role="rewriter")
    result.artifact_dir = out_dir
    return result


def train_retriever(dialogs_path: str | Path, propositions_path: str | Path,
                    out_dir: str | Path, spec: TrainSpec | None = None) -> TrainResult:
    """Contrastive bi-encoder training with in-batch negatives."""
    spec = spec or TrainSpec(task="retriever")
    torch.manual_seed(spec.seed)
    pairs = load_retriever_pairs(dialogs_path, propositions_path,
                                 history_pairs=spec.history_pairs)
    train_pairs, val_pairs = _split(pairs, spec.val_fraction, spec.seed)
    vocab = Vocab.build([q for q, _ in train_pairs] + [p for _, p in train_pairs])
    model = BiEncoder(len(vocab), d_model=spec.d_model, nhead=spec.nhead,
                      num_layers=spec.num_layers,
                      dim_feedforward=spec.dim_feedforward, dropout=spec.dropout,
                      max_len=spec.max_len, temperature=spec.temperature)
    loss_fn = nn.CrossEntropyLoss()

    def batch_loss(batch: list[tuple[str, str]]) -> torch.Tensor:
        queries = encode_batch(vocab, [q for q, _ in batch], spec.max_len)
        positives = encode_batch(vocab, [p for _, p in batch], spec.max_len)
        logits = model(queries, positives)
        labels = torch.arange(len(batch))
        return loss_fn(logits, labels)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger = _Logger(out_dir / "training_log.jsonl")
    logger.write({"event": "start", "task": "retriever", "pairs": len(pairs),
                  "train": len(train_pairs), "val": len(val_pairs),
                  "spec": asdict(spec)})
    rng = random.Random(spec.seed + 1)

    def epoch_fn(optimizer) -> float:
        order = list(range(len(train_pairs)))
        rng.shuffle(order)
        total = 0.0
        batches = 0
        for start in range(0, len(order), spec.batch_size):
            batch = [train_pairs[i] for i in order[start : start + spec.batch_size]]
            if len(batch) < 2:
                continue  # in-batch negatives need at least two rows
            optimizer.zero_grad()
            loss = batch_loss(batch)
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        return total / max(1, batches)

    def val_fn() -> float:
        batch = val_pairs if len(val_pairs) >= 2 else val_pairs * 2
        return float(batch_loss(batch))

    best_state, result = _run_schedule(model, spec, epoch_fn, val_fn, logger)
    model.load_state_dict(best_state)
    _save_artifact(out_dir, model, vocab, spec, role="embedder")
    result.artifact_dir = out_dir
    return result


def _save_artifact(out_dir: Path, model: nn.Module, vocab: Vocab,
                   spec: TrainSpec, role: str) -> None:
    torch.save(model.state_dict(), out_dir / "model.pt")
    vocab.save(out_dir / "vocab.json")
    (out_dir / "meta.json").write_text(
        json.dumps({"role": role, "spec": asdict(spec), "vocab_size": len(vocab)},
                   ensure_ascii=False, sort_keys=True, indent=2),
        encoding="utf-8")


def load_artifact(artifact_dir: str | Path):
    """Reload a trained model in inference mode. Returns (model, vocab, meta)."""
    artifact_dir = Path(artifact_dir)
    meta = json.loads((artifact_dir / "meta.json").read_text(encoding="utf-8"))
    vocab = Vocab.load(artifact_dir / "vocab.json")
    spec = meta["spec"]
    common = dict(d_model=spec["d_model"], nhead=spec["nhead"],
                  num_layers=spec["num_layers"],
                  dim_feedforward=spec["dim_feedforward"],
                  dropout=spec["dropout"], max_len=spec["max_len"])
    if meta["role"] == "rewriter":
        model: nn.Module = Seq2SeqRewriter(meta["vocab_size"], **common)
    else:
        model = BiEncoder(meta["vocab_size"], temperature=spec["temperature"], **common)
    model.load_state_dict(torch.load(artifact_dir / "model.pt", weights_only=True))
    model.eval()
    return model, vocab, meta
