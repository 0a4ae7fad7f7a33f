"""Trainer command line: train artifacts, serve them over HTTP."""
from __future__ import annotations

import argparse
import sys

from .training import TrainSpec, train_retriever, train_rewriter


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="convqa-trainer",
        description="Train and serve the lightweight question rewriter and retriever.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train an artifact")
    p.add_argument("task", choices=["rewriter", "retriever"])
    p.add_argument("--pairs", help="training-pair TSV (rewriter)")
    p.add_argument("--dialogs", help="dialog JSONL (retriever)")
    p.add_argument("--propositions", help="proposition JSONL (retriever)")
    p.add_argument("--out", required=True, help="artifact output directory")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=15)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="serve a trained artifact")
    p.add_argument("artifact", help="artifact directory")
    p.add_argument("--role", choices=["rewriter", "embedder"], required=True)
    p.add_argument("--port", type=int, default=8731)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    return args.func(args)


def cmd_train(args: argparse.Namespace) -> int:
    spec = TrainSpec(task=args.task, batch_size=args.batch_size,
                     max_epochs=args.max_epochs, patience=args.patience,
                     lr=args.lr, seed=args.seed)
    if args.task == "rewriter":
        if not args.pairs:
            print("error: --pairs is required for the rewriter task", file=sys.stderr)
            return 1
        result = train_rewriter(args.pairs, args.out, spec)
    else:
        if not (args.dialogs and args.propositions):
            print("error: --dialogs and --propositions are required for the "
                  "retriever task", file=sys.stderr)
            return 1
        result = train_retriever(args.dialogs, args.propositions, args.out, spec)
    print(f"trained {args.task}: {result.epochs_run} epochs, best epoch "
          f"{result.best_epoch} (val loss {result.best_val_loss:.4f}), "
          f"{len(result.lr_drops)} lr drop(s), "
          f"{'early stop' if result.stopped_early else 'ran to max epochs'} "
          f"-> {result.artifact_dir}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .serving import serve

    try:
        serve(args.artifact, role=args.role, port=args.port, host=args.host)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
