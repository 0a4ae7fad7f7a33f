"""Word-level vocabulary shared by the rewriter and the bi-encoder."""
from __future__ import annotations

import json
from pathlib import Path

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]


class Vocab:
    def __init__(self, tokens: list[str]):
        self.itos = SPECIALS + tokens
        self.stoi = {token: index for index, token in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    @classmethod
    def build(cls, texts: list[str], min_count: int = 1, max_size: int = 20_000) -> "Vocab":
        counts: dict[str, int] = {}
        for text in texts:
            for token in text.split():
                counts[token] = counts.get(token, 0) + 1
        kept = [t for t, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
                if c >= min_count and t not in SPECIALS]
        return cls(kept[:max_size])

    def encode(self, text: str, max_len: int | None = None,
               bos: bool = False, eos: bool = False) -> list[int]:
        ids = [self.stoi.get(token, UNK) for token in text.split()]
        if max_len is not None:
            ids = ids[:max_len]
        if bos:
            ids = [BOS] + ids
        if eos:
            ids = ids + [EOS]
        return ids

    def decode(self, ids: list[int]) -> str:
        tokens = []
        for index in ids:
            if index in (PAD, BOS):
                continue
            if index == EOS:
                break
            tokens.append(self.itos[index] if 0 <= index < len(self.itos) else "<unk>")
        return " ".join(tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"tokens": self.itos[len(SPECIALS):]}, ensure_ascii=False),
            encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(payload["tokens"])
