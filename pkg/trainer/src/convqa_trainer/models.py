"""Compact transformer models trained from scratch.

The rewriter is a small encoder-decoder over a word-level vocabulary with
the conditional-token objective: targets are either `no_rewrite` or
`rewrite <question>`, and greedy decoding stops as soon as the leading
`no_rewrite` token appears. The retriever is a mean-pooled bi-encoder
producing L2-normalized vectors, trained contrastively with in-batch
negatives.
"""
from __future__ import annotations

import torch
from torch import nn

from .vocab import BOS, EOS, PAD, Vocab


def _causal_mask(size: int, device) -> torch.Tensor:
    return torch.triu(torch.ones(size, size, dtype=torch.bool, device=device), diagonal=1)


class Seq2SeqRewriter(nn.Module):
    def __init__(self, vocab_size: int, d_model: int = 128, nhead: int = 4,
                 num_layers: int = 2, dim_feedforward: int = 256,
                 dropout: float = 0.1, max_len: int = 160):
        super().__init__()
        self.d_model = d_model
        self.max_len = max_len
        self.embedding = nn.Embedding(vocab_size, d_model, padding_idx=PAD)
        self.positions = nn.Embedding(max_len, d_model)
        self.encoder = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(d_model, nhead, dim_feedforward, dropout,
                                       batch_first=True),
            num_layers)
        self.decoder = nn.TransformerDecoder(
            nn.TransformerDecoderLayer(d_model, nhead, dim_feedforward, dropout,
                                       batch_first=True),
            num_layers)
        self.generator = nn.Linear(d_model, vocab_size)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        length = ids.size(1)
        pos = torch.arange(length, device=ids.device).clamp(max=self.max_len - 1)
        return self.embedding(ids) + self.positions(pos)[None, :, :]

    def encode(self, src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        src_pad = src.eq(PAD)
        memory = self.encoder(self._embed(src), src_key_padding_mask=src_pad)
        return memory, src_pad

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits for each target position."""
        memory, src_pad = self.encode(src)
        hidden = self.decoder(
            self._embed(tgt_in), memory,
            tgt_mask=_causal_mask(tgt_in.size(1), tgt_in.device),
            tgt_key_padding_mask=tgt_in.eq(PAD),
            memory_key_padding_mask=src_pad)
        return self.generator(hidden)

    @torch.no_grad()
    def greedy_decode(self, src: torch.Tensor, max_tokens: int,
                      no_rewrite_id: int | None = None) -> list[int]:
        """Greedy decoding for a single source sequence (shape [1, S]).

        Generation halts immediately when the first emitted token is the
        no_rewrite marker, and always at EOS or `max_tokens`.
        """
        self.eval()
        memory, src_pad = self.encode(src)
        out = torch.full((1, 1), BOS, dtype=torch.long, device=src.device)
        generated: list[int] = []
        for _ in range(max(1, max_tokens)):
            hidden = self.decoder(self._embed(out), memory,
                                  tgt_mask=_causal_mask(out.size(1), src.device),
                                  memory_key_padding_mask=src_pad)
            next_id = int(self.generator(hidden[:, -1]).argmax(dim=-1))
            if next_id == EOS:
                break
            generated.append(next_id)
            if no_rewrite_id is not None and len(generated) == 1 \
                    and next_id == no_rewrite_id:
                break
            out = torch.cat([out, torch.tensor([[next_id]], device=src.device)], dim=1)
        return generated


class BiEncoder(nn.Module):
    def __init__(self, vocab_size: int, d_model: int = 128, nhead: int = 4,
                 num_layers: int = 2, dim_feedforward: int = 256,
                 dropout: float = 0.1, max_len: int = 160,
                 temperature: float = 0.05):
        super().__init__()
        self.d_model = d_model
        self.max_len = max_len
        self.temperature = temperature
        self.embedding = nn.Embedding(vocab_size, d_model, padding_idx=PAD)
        self.positions = nn.Embedding(max_len, d_model)
        self.encoder = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(d_model, nhead, dim_feedforward, dropout,
                                       batch_first=True),
            num_layers)

    def encode(self, ids: torch.Tensor) -> torch.Tensor:
        """Mean-pooled, L2-normalized sequence embeddings."""
        pad_mask = ids.eq(PAD)
        length = ids.size(1)
        pos = torch.arange(length, device=ids.device).clamp(max=self.max_len - 1)
        hidden = self.encoder(self.embedding(ids) + self.positions(pos)[None, :, :],
                              src_key_padding_mask=pad_mask)
        keep = (~pad_mask).unsqueeze(-1).float()
        pooled = (hidden * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        return nn.functional.normalize(pooled, dim=-1)

    def forward(self, queries: torch.Tensor, positives: torch.Tensor) -> torch.Tensor:
        """In-batch similarity logits: row i's positive is column i."""
        return (self.encode(queries) @ self.encode(positives).T) / self.temperature


def pad_batch(sequences: list[list[int]], device: torch.device | str = "cpu") -> torch.Tensor:
    width = max(len(s) for s in sequences)
    out = torch.full((len(sequences), width), PAD, dtype=torch.long, device=device)
    for row, seq in enumerate(sequences):
        out[row, : len(seq)] = torch.tensor(seq, dtype=torch.long, device=device)
    return out


def encode_batch(vocab: Vocab, texts: list[str], max_len: int,
                 bos: bool = False, eos: bool = False) -> torch.Tensor:
    return pad_batch([vocab.encode(t, max_len=max_len, bos=bos, eos=eos) for t in texts])
