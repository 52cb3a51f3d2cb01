"""eqgen command line: train a model, generate corpora, score UVE."""

from __future__ import annotations

import argparse
import importlib.resources
import json
import sys

from .model import EquationVae, VaeConfig
from .primary import PrimaryUnavailableError
from .sampling import sample, uve
from .training import CorpusError, train


def default_corpus_path() -> str:
    return str(importlib.resources.files("eqgen") / "corpus" / "lbp80.txt")


def _read_lines(path: str) -> list[str]:
    with open(path) as fh:
        return [l.strip() for l in fh if l.strip()]


def _cmd_train(args) -> int:
    corpus = _read_lines(args.corpus)
    cfg = VaeConfig(epochs=args.epochs)
    result = train(corpus, cfg, seed=args.seed, verbose=not args.quiet)
    result.model.save(args.out)
    if args.history:
        with open(args.history, "w") as fh:
            json.dump(result.history, fh, indent=2)
            fh.write("\n")
    print(f"trained {result.epochs_run} epochs "
          f"(best val loss {result.best_val_loss:.3f}); model -> {args.out}")
    return 0


def _cmd_generate(args) -> int:
    model = EquationVae.load(args.model)
    lines = sample(model, args.count, seed=args.seed, temperature=args.temperature)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
    else:
        for line in lines:
            print(line)
    return 0


def _cmd_uve(args) -> int:
    samples = _read_lines(args.samples)
    corpus = _read_lines(args.corpus)
    print(uve(samples, corpus))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the VAE on an equation corpus")
    p.add_argument("--corpus", default=default_corpus_path())
    p.add_argument("--out", required=True, help="checkpoint path (.pt)")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", default=None, help="write loss history JSON here")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("generate", help="sample equations from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("uve", help="count unseen & valid equations in a sample file")
    p.add_argument("--samples", required=True)
    p.add_argument("--corpus", default=default_corpus_path())
    p.set_defaults(fn=_cmd_uve)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.fn(args)
    except (CorpusError, PrimaryUnavailableError, OSError, ValueError) as exc:
        sys.stderr.write(f"eqgen: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
