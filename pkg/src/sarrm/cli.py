"""Command-line entry point: ``sarrm {generate,train,eval,plot}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from sarrm import commands, config
from sarrm.errors import SarrmError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sarrm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", required=True, help="run config (JSON)")
        sp.add_argument("--out", help="output directory (default: config output_dir/<command>)")
        sp.add_argument("--seed", type=int, help="override the root seed (unsigned 64-bit)")
        if dataset:
            sp.add_argument("--dataset", required=True, help="dataset directory from 'generate'")

    g = sub.add_parser("generate", help="draw train/test network realizations")
    common(g, dataset=False)

    t = sub.add_parser("train", help="train the policy and the dual regressor")
    common(t)
    t.add_argument("--resume", action="store_true", help="continue from <out>/train_state.json")
    t.add_argument("--stop-after", type=int, help="stop after this many epochs (checkpoint only)")

    e = sub.add_parser("eval", help="evaluate methods on the test split")
    common(e)
    e.add_argument("--method", action="append",
                   help=f"one of {', '.join(commands.METHODS)}; repeat or comma-separate (default: all)")
    e.add_argument("--checkpoint", help="training output directory with policy.json / regressor.json")
    e.add_argument("--ablated-checkpoint", help="separately trained ablated model (default: --checkpoint)")
    e.add_argument("--no-traces", action="store_true", help="skip per-network trace CSVs")

    pl = sub.add_parser("plot", help="render SVG charts from a metrics CSV")
    pl.add_argument("metrics", help="metrics.csv written by 'eval'")
    pl.add_argument("--out", help="output directory (default: next to the CSV)")
    pl.add_argument("--train-log", help="also plot a train_log.csv")
    return p


def _methods(values):
    if not values:
        return list(commands.METHODS)
    out = []
    for v in values:
        out.extend(x.strip() for x in v.split(",") if x.strip())
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            for path in commands.cmd_plot(args.metrics, args.out, args.train_log):
                print(path)
            return 0
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise config.ConfigError("must be an unsigned 64-bit integer", field="--seed")
        cfg = config.load(args.config, seed=args.seed)
        out = Path(args.out) if args.out else Path(cfg.output_dir) / args.command
        if args.command == "generate":
            print(commands.cmd_generate(cfg, out))
        elif args.command == "train":
            print(commands.cmd_train(cfg, args.dataset, out, resume=args.resume, stop_after=args.stop_after))
        elif args.command == "eval":
            rows = commands.cmd_eval(cfg, args.dataset, out, _methods(args.method), args.checkpoint,
                                     args.ablated_checkpoint, write_traces=not args.no_traces)
            for r in rows:
                print(f"{r['method']:>18}  mean={r['mean']:.4f}  min={r['min']:.4f}  p5={r['p5']:.4f}  "
                      f"transient={r['transient_length']}")
    except SarrmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
