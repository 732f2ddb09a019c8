"""Command-line entry point: ``evp <command> ...``.

Exit status is 0 on success, 1 for invalid input (bad config, malformed
files, shape mismatches) and 2 when a computation goes non-finite or the
gradient suite fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import evpt
from .errors import EVPError, NumericalError
from .text import STRATEGIES, aggregate, load_embeddings, save_embeddings

log = logging.getLogger("evp")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _load_config(path):
    from .harness import RunConfig

    if path is None:
        return RunConfig()
    return RunConfig.from_json(Path(path).read_text(encoding="utf-8"))


def cmd_gen_data(args) -> int:
    from .harness import gen_boxworld

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    data = gen_boxworld(cfg, args.split, args.size)
    data.save(args.out)
    print(f"wrote {len(data)} {args.split} samples to {args.out}")
    return EXIT_OK


def cmd_latent_std(args) -> int:
    from .harness import BoxWorld, build_model, dataset_latent_std

    cfg = _load_config(args.config)
    stats = dataset_latent_std(build_model(cfg), BoxWorld.load(args.data))
    evpt.save(args.out, stats.std.astype(np.float32))
    print("std=" + " ".join(repr(float(v)) for v in stats.std))
    return EXIT_OK


def cmd_aggregate(args) -> int:
    sets = load_embeddings(args.manifest)
    out = aggregate(sets, args.strategy)
    save_embeddings(out, args.out)
    print(f"{len(sets)} sets -> {len(out)} sets of {out[0].k}x{out[0].d}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_suite

    results, elapsed = run_suite(cases=args.cases, seed=args.seed, eps=args.eps, names=args.only)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} max_rel_err={r.max_error:.3e} cases={args.cases}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed in {elapsed:.1f}s")
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_train(args) -> int:
    from .harness import BoxWorld, train

    cfg = _load_config(args.config)
    data = BoxWorld.load(args.data) if args.data else None
    result = train(cfg, args.out, data)
    print(f"trained {cfg.steps} steps, final loss {result.losses[-1]!r}" if result.losses else "no steps run")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import BoxWorld, evaluate

    report = evaluate(args.checkpoint, BoxWorld.load(args.data), args.predictor, args.report)
    sys.stdout.write(report.to_text())
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a BoxWorld split to a directory")
    p.add_argument("--config", help="RunConfig JSON (defaults if omitted)")
    p.add_argument("--split", choices=["train", "eval"], default="train")
    p.add_argument("--size", type=int, help="number of samples (config default otherwise)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("latent-std", help="per-channel latent std of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latent_std)

    p = sub.add_parser("aggregate", help="regularize embedding sets")
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--only", nargs="+", help="restrict to these operations")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train on BoxWorld and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", help="pre-generated training split (rendered from the config otherwise)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint and write a metrics report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--predictor", choices=["model", "ground_truth", "median"], default="model")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"evp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (EVPError, ValueError, KeyError, OSError) as exc:
        print(f"evp: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
