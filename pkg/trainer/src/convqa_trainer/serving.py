"""HTTP serving of trained artifacts behind the pipeline's wire contracts.

Rewriter:  POST /rewrite {input, max_tokens} -> {output}
Embedder:  POST /embed   {texts}             -> {dim, vectors}

Outputs of the rewriter always parse under the pipeline's conditional
protocol: greedy decoding emits `no_rewrite` (generation halts on that
token) or `rewrite <question>`; anything else is still a valid bare
rewrite for the consumer. Inference is deterministic: models are served
in eval mode and decoding is greedy.
"""
from __future__ import annotations

import socket
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .models import BiEncoder, Seq2SeqRewriter, encode_batch
from .training import load_artifact


class RewriteRequest(BaseModel):
    input: str
    max_tokens: int = Field(default=64, ge=1, le=512)


class RewriteResponse(BaseModel):
    output: str


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)


class EmbedResponse(BaseModel):
    dim: int
    vectors: list[list[float]]


class RewriterService:
    def __init__(self, artifact_dir: str | Path):
        model, vocab, meta = load_artifact(artifact_dir)
        if not isinstance(model, Seq2SeqRewriter):
            raise ValueError(f"{artifact_dir} does not hold a rewriter artifact")
        self.model = model
        self.vocab = vocab
        self.max_len = meta["spec"]["max_len"]
        self.no_rewrite_id = vocab.stoi.get("no_rewrite")

    def rewrite(self, text: str, max_tokens: int) -> str:
        src = encode_batch(self.vocab, [text], self.max_len)
        ids = self.model.greedy_decode(src, max_tokens, no_rewrite_id=self.no_rewrite_id)
        return self.vocab.decode(ids)


class EmbedderService:
    def __init__(self, artifact_dir: str | Path):
        model, vocab, meta = load_artifact(artifact_dir)
        if not isinstance(model, BiEncoder):
            raise ValueError(f"{artifact_dir} does not hold an embedder artifact")
        self.model = model
        self.vocab = vocab
        self.max_len = meta["spec"]["max_len"]
        self.dim = model.d_model

    @torch.no_grad()
    def embed(self, texts: list[str]) -> list[list[float]]:
        ids = encode_batch(self.vocab, texts, self.max_len)
        return [[float(v) for v in row] for row in self.model.encode(ids)]


def create_app(rewriter_dir: str | Path | None = None,
               embedder_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="convqa-trainer serving")
    rewriter = RewriterService(rewriter_dir) if rewriter_dir else None
    embedder = EmbedderService(embedder_dir) if embedder_dir else None

    @app.post("/rewrite", response_model=RewriteResponse)
    def rewrite(request: RewriteRequest) -> RewriteResponse:
        if rewriter is None:
            raise HTTPException(status_code=503, detail="no rewriter artifact loaded")
        return RewriteResponse(output=rewriter.rewrite(request.input, request.max_tokens))

    @app.post("/embed", response_model=EmbedResponse)
    def embed(request: EmbedRequest) -> EmbedResponse:
        if embedder is None:
            raise HTTPException(status_code=503, detail="no embedder artifact loaded")
        return EmbedResponse(dim=embedder.dim, vectors=embedder.embed(request.texts))

    return app


def serve(artifact_dir: str | Path, role: str, port: int, host: str = "127.0.0.1") -> None:
    """Run a blocking uvicorn server for one artifact. Raises OSError when
    the port is already bound."""
    if role not in ("rewriter", "embedder"):
        raise ValueError(f"unknown role {role!r}")
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        raise OSError(f"port {port} unavailable: {exc}") from exc
    finally:
        probe.close()
    import uvicorn

    app = create_app(rewriter_dir=artifact_dir if role == "rewriter" else None,
                     embedder_dir=artifact_dir if role == "embedder" else None)
    uvicorn.run(app, host=host, port=port, log_level="warning")
