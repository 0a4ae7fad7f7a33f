"""Command-line entry point.

Subcommands cover the pipeline end to end: ingest documents, extract
propositions, synthesize dialogs, build indexes, run ad-hoc retrieval,
evaluate strategy x retriever combinations, print corpus statistics, and
generate a grounded response for one dialog turn.

Flags mirror RunConfig field names; `--backend mock --fixtures <path>`
activates offline mode. Pass the literal value ``bundled`` to --documents,
--fixtures, or --config to use the packaged demo fixture.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fixtures as bundled_fixtures
from .config import RunConfig, load_config
from .corpus import load_documents, load_propositions, save_documents, save_propositions
from .dialog_synth import (
    SynthesisConfig,
    SynthesisPipeline,
    load_dialogs,
    save_dialogs,
)
from .errors import PipelineError, StateError
from .evaluation import (
    corpus_stats,
    evaluate_retrieval,
    render_table,
    validate_report_ranges,
)
from .llm_gateway import (
    CompletionRequest,
    LiveChatBackend,
    LiveEmbeddingBackend,
    LlmGateway,
    MockChatBackend,
    MockEmbeddingBackend,
)
from .retrieval import Bm25Retriever, DenseRetriever, Retriever, load_vectors_jsonl
from .rewrite import Formulation, HttpRewriter, formulate

_BUNDLED = {
    "documents": "docs.jsonl",
    "fixtures": "responses.jsonl",
    "config": "config.toml",
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convqa",
        description="Synthesize grounded conversational QA dialogs and evaluate retrieval.")
    sub = parser.add_subparsers(dest="command")

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file ('bundled' for the demo config)")
        p.add_argument("--documents", help="documents JSONL path")
        p.add_argument("--propositions", help="propositions JSONL path")
        p.add_argument("--dialogs", help="dialogs JSONL path")
        p.add_argument("--indexes", help="index snapshot directory")
        p.add_argument("--reports", help="report output directory")
        p.add_argument("--fixtures", help="mock fixture JSONL ('bundled' for the demo)")
        p.add_argument("--vectors", help="precomputed embedding JSONL ({id, vector})")
        p.add_argument("--audit-log", dest="audit_log", help="completion audit log path")
        p.add_argument("--backend", choices=["live", "mock"])
        p.add_argument("--units", choices=["propositions", "sentences"])
        p.add_argument("--n", type=int, help="sublist size (default 30)")
        p.add_argument("--k1", type=float, help="BM25 k1 (default 0.05)")
        p.add_argument("--b", type=float, help="BM25 b (default 5)")
        p.add_argument("--rrf-k", dest="rrf_k", type=int, help="RRF constant (default 60)")
        p.add_argument("--rrf-depth", dest="rrf_depth", type=int,
                       help="per-retriever depth before fusion (default 100)")
        p.add_argument("--top-k", dest="top_k", type=int, help="results per query (default 20)")
        p.add_argument("--history-h", dest="history_h", type=int,
                       help="history pairs for the context strategy (default 1)")
        p.add_argument("--seeds", help="comma-separated split seeds (default 1,2,3)")
        p.add_argument("--sublist-seed", dest="sublist_seed", type=int,
                       help="shuffle sublist use order with this seed")
        p.add_argument("--parallelism", type=int)
        p.add_argument("--llm-base-url", dest="llm_base_url")
        p.add_argument("--embed-base-url", dest="embed_base_url")
        p.add_argument("--llm-model", dest="llm_model")
        p.add_argument("--rewriter-endpoint", dest="rewriter_endpoint")

    p = sub.add_parser("ingest", help="normalize raw documents into the documents JSONL")
    p.add_argument("source", help="directory of .txt files or a document JSONL")
    p.add_argument("--domain", help="keep only documents with this domain label")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("propose", help="extract propositions (pipeline step 1)")
    common(p)
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("synthesize", help="run the full dialog synthesis pipeline")
    common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("index", help="build and persist retrieval indexes")
    common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="run one ad-hoc query against built indexes")
    p.add_argument("--query", required=True)
    p.add_argument("--strategy", choices=["sparse", "dense", "rrf"], default="sparse")
    common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("evaluate", help="evaluate a formulation strategy x retriever")
    p.add_argument("--strategy", choices=["context", "query_co", "query_de", "rewriter"],
                   default="query_de")
    p.add_argument("--retriever", choices=["sparse", "dense", "rrf"], default="rrf")
    p.add_argument("--table", action="store_true", help="print an aligned text table")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="corpus statistics report")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("respond", help="generate a grounded response for one dialog turn")
    p.add_argument("--dialog-id", dest="dialog_id", required=True)
    p.add_argument("--turn", type=int, required=True)
    p.add_argument("--strategy", choices=["context", "query_co", "query_de", "rewriter"],
                   default="query_de")
    common(p)
    p.set_defaults(func=cmd_respond)

    return parser


def _resolve_bundled(kind: str, value: str | None) -> str | None:
    if value == "bundled":
        return str(bundled_fixtures.bundled_path(_BUNDLED[kind]))
    return value


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for key in ("documents", "propositions", "dialogs", "indexes", "reports",
                "vectors", "audit_log", "backend", "units", "n", "k1", "b",
                "rrf_k", "rrf_depth", "top_k", "history_h", "sublist_seed",
                "parallelism", "llm_base_url", "embed_base_url", "llm_model",
                "rewriter_endpoint"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    fixtures = _resolve_bundled("fixtures", getattr(args, "fixtures", None))
    if fixtures is not None:
        overrides["fixtures"] = fixtures
    documents = _resolve_bundled("documents", getattr(args, "documents", None))
    if documents is not None:
        overrides["documents"] = documents
    seeds = getattr(args, "seeds", None)
    if seeds is not None:
        overrides["seeds"] = [int(s) for s in str(seeds).split(",") if s.strip()]
    config_path = _resolve_bundled("config", getattr(args, "config", None))
    config = load_config(config_path, overrides)
    # config files may also name the packaged demo inputs
    config.paths.documents = _resolve_bundled("documents", config.paths.documents)
    config.paths.fixtures = _resolve_bundled("fixtures", config.paths.fixtures)
    return config


def _require(path: str | Path, what: str, producer: str) -> Path:
    resolved = Path(path) if path else None
    if resolved is None or not resolved.exists():
        raise StateError(
            f"missing {what} at {path!r}; produce it with `convqa {producer}`")
    return resolved


def _build_gateway(config: RunConfig, need_chat: bool = False,
                   need_embed: bool = False) -> LlmGateway:
    chat = None
    embed = None
    if config.backend == "mock":
        if config.paths.fixtures:
            chat = MockChatBackend(_require(config.paths.fixtures, "fixture file",
                                            "synthesize (audit capture) or tools/make_fixture"))
        embed = MockEmbeddingBackend(dim=config.mock_embedding_dim)
    else:
        if config.llm_base_url:
            chat = LiveChatBackend(config.llm_base_url, api_key=config.llm_api_key,
                                   model=config.llm_model)
        if config.embed_base_url:
            embed = LiveEmbeddingBackend(config.embed_base_url)
    if need_chat and chat is None:
        raise StateError(
            "no chat backend: set --fixtures for mock mode or LLM_BASE_URL for live mode")
    if need_embed and embed is None:
        raise StateError(
            "no embedding backend: use mock mode or set EMBED_BASE_URL")
    return LlmGateway(chat_backend=chat, embedding_backend=embed,
                      audit_log_path=config.paths.audit_log or None,
                      parallelism=config.parallelism)


def _synthesis_config(config: RunConfig) -> SynthesisConfig:
    return SynthesisConfig(n=config.n, units=config.units, retries=config.retries,
                           max_tokens=config.max_tokens, bm25=config.bm25,
                           sublist_seed=config.sublist_seed,
                           parallelism=config.parallelism)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _out(path: str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    source = _resolve_bundled("documents", args.source)
    documents = load_documents(source, domain_filter=args.domain)
    save_documents(documents, _out(config.paths.documents))
    print(f"ingested {len(documents)} documents -> {config.paths.documents}")
    return 0


def cmd_propose(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    documents = load_documents(
        _require(config.paths.documents, "documents file", "ingest"))
    if config.units == "sentences":
        from .corpus import sentence_units

        repo = sentence_units(documents)
        skipped: list[str] = []
        failed: list[str] = []
    else:
        gateway = _build_gateway(config, need_chat=True)
        pipeline = SynthesisPipeline(gateway, _synthesis_config(config))
        props = []
        skipped, failed = [], []
        for doc in documents:
            extracted, error = pipeline._propose_one(doc)
            if error is not None:
                failed.append(doc.id)
            elif not extracted:
                skipped.append(doc.id)
            else:
                props.extend(extracted)
        from .corpus import PropositionSet

        repo = PropositionSet(props)
    save_propositions(repo, _out(config.paths.propositions))
    report = {"documents": len(documents), "propositions": len(repo),
              "skipped": sorted(skipped), "proposition_failed": sorted(failed)}
    _write_json(Path(config.paths.reports) / "propose_report.json", report)
    print(f"wrote {len(repo)} propositions -> {config.paths.propositions}")
    return 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    documents = load_documents(
        _require(config.paths.documents, "documents file", "ingest"))
    # sentence units skip step 1 only; the step-2 prompts always need a backend
    gateway = _build_gateway(config, need_chat=True)
    pipeline = SynthesisPipeline(gateway, _synthesis_config(config))
    dialogs, repo, report = pipeline.synthesize_corpus(documents)
    save_propositions(repo, _out(config.paths.propositions))
    save_dialogs(dialogs, _out(config.paths.dialogs))
    _write_json(Path(config.paths.reports) / "synthesis_report.json", report)
    print(f"synthesized {len(dialogs)} dialogs "
          f"({report['pairs']['total']} pairs) -> {config.paths.dialogs}")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    repo = load_propositions(
        _require(config.paths.propositions, "propositions file", "propose or synthesize"))
    items = [(p.id, p.text) for p in repo]
    index_dir = Path(config.paths.indexes)
    index_dir.mkdir(parents=True, exist_ok=True)
    bm25 = Bm25Retriever(k1=config.bm25.k1, b=config.bm25.b).fit(items)
    bm25.save(index_dir / "bm25.json")
    built = ["bm25"]
    dense_items = None
    if config.paths.vectors:
        dense_items = load_vectors_jsonl(
            _require(config.paths.vectors, "vector import file", "an external embedder"))
    else:
        try:
            gateway = _build_gateway(config, need_embed=True)
        except StateError:
            gateway = None
            print("note: no embedding backend configured; skipping the dense index")
        if gateway is not None:
            vectors = gateway.embed([p.text for p in repo])
            dense_items = list(zip((p.id for p in repo), vectors))
    if dense_items is not None:
        DenseRetriever().fit(dense_items).save(index_dir / "dense.json")
        built.append("dense")
    print(f"built indexes: {', '.join(built)} -> {index_dir}")
    return 0


def _load_engine(config: RunConfig, strategy: str) -> Retriever:
    index_dir = Path(config.paths.indexes)
    bm25 = dense = embed_query = None
    if strategy in ("sparse", "rrf"):
        bm25 = Bm25Retriever.load(_require(index_dir / "bm25.json", "BM25 index", "index"))
    if strategy in ("dense", "rrf"):
        dense = DenseRetriever.load(_require(index_dir / "dense.json", "dense index", "index"))
        gateway = _build_gateway(config, need_embed=True)
        embed_query = lambda text: gateway.embed([text])[0]  # noqa: E731
    return Retriever(bm25=bm25, dense=dense, embed_query=embed_query,
                     rrf_k=config.rrf_k, rrf_depth=config.rrf_depth)


def cmd_retrieve(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    engine = _load_engine(config, args.strategy)
    results = engine.retrieve(args.strategy, args.query, k=config.top_k)
    print(json.dumps(
        {"query": args.query, "strategy": args.strategy,
         "results": [{"id": item_id, "score": score} for item_id, score in results.entries]},
        ensure_ascii=False, sort_keys=True, indent=2))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    repo = load_propositions(
        _require(config.paths.propositions, "propositions file", "propose or synthesize"))
    dialogs = load_dialogs(
        _require(config.paths.dialogs, "dialogs file", "synthesize"), repo=repo)
    engine = _load_engine(config, args.retriever)
    rewriter = None
    if args.strategy == "rewriter":
        if not config.rewriter_endpoint:
            raise StateError("strategy=rewriter requires --rewriter-endpoint")
        rewriter = HttpRewriter(config.rewriter_endpoint)
    formulation = Formulation(kind=args.strategy, history_pairs=config.history_h,
                              rewriter_endpoint=config.rewriter_endpoint or None)
    report = evaluate_retrieval(dialogs, formulation, args.retriever,
                                seeds=config.seeds, engine=engine,
                                top_k=config.top_k, rewriter=rewriter)
    validate_report_ranges(report)
    out = Path(config.paths.reports) / f"eval_{args.strategy}_{args.retriever}.json"
    _write_json(out, report.to_dict())
    if args.table:
        print(render_table([report]))
    else:
        print(json.dumps(report.to_dict(), ensure_ascii=False, sort_keys=True, indent=2))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    documents = load_documents(
        _require(config.paths.documents, "documents file", "ingest"))
    repo = load_propositions(
        _require(config.paths.propositions, "propositions file", "propose or synthesize"))
    dialogs = load_dialogs(
        _require(config.paths.dialogs, "dialogs file", "synthesize"), repo=repo)
    report = corpus_stats(dialogs, documents, repo)
    _write_json(Path(config.paths.reports) / "stats.json", report)
    print(json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2))
    return 0


def cmd_respond(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    repo = load_propositions(
        _require(config.paths.propositions, "propositions file", "propose or synthesize"))
    dialogs = load_dialogs(
        _require(config.paths.dialogs, "dialogs file", "synthesize"), repo=repo)
    matches = [d for d in dialogs if d.id == args.dialog_id]
    if not matches:
        raise StateError(f"no dialog with id {args.dialog_id!r} in {config.paths.dialogs}")
    dialog = matches[0]
    rewriter = None
    if args.strategy == "rewriter":
        if not config.rewriter_endpoint:
            raise StateError("strategy=rewriter requires --rewriter-endpoint")
        rewriter = HttpRewriter(config.rewriter_endpoint)
    formulation = Formulation(kind=args.strategy, history_pairs=config.history_h,
                              rewriter_endpoint=config.rewriter_endpoint or None)
    query = formulate(dialog, args.turn, formulation, rewriter)
    engine = _load_engine(config, "rrf" if (Path(config.paths.indexes) / "dense.json").exists()
                          else "sparse")
    strategy = "rrf" if engine.dense is not None else "sparse"
    results = engine.retrieve(strategy, query, k=config.top_k)
    proposition_texts = [repo[item_id].text for item_id, _ in results.entries]
    gateway = _build_gateway(config, need_chat=True)
    completion = gateway.complete(CompletionRequest(
        template_name="response_gen",
        bindings={"propositions": json.dumps(proposition_texts, ensure_ascii=False),
                  "question": query},
        max_tokens=config.max_tokens))
    print(completion.strip())
    return 0


if __name__ == "__main__":
    sys.exit(main())
