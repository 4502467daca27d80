"""Command-line runner.

Exit codes: 0 success, 1 runtime or file-format failure, 2 invalid
configuration, 3 checkpoint/config digest mismatch.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import build_experiment, load_config
from .core import check_stop
from .data import export_heatmap
from .errors import ConfigError, DigestMismatchError, FederationError, FormatError, InsufficientDataError
from .events import RoundFinished, Subscriber
from .subscribers import load_checkpoint, read_metrics

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DIGEST = 3

log = logging.getLogger("fedsim.cli")


class _RoundPrinter(Subscriber):
    def __init__(self, out):
        self.out = out

    def on_event(self, event, ctx):
        if isinstance(event, RoundFinished):
            m = event.metrics
            print(f"round {event.round:4d}  acc {m.accuracy:.4f}  loss {m.loss:.4f}  "
                  f"bytes {event.cumulative_bytes}", file=self.out, flush=True)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _execute(cfg, ctx=None) -> int:
    try:
        exp = build_experiment(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (InsufficientDataError, FormatError, OSError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    subs = [_RoundPrinter(sys.stdout), *exp.subscribers()]
    fed = exp.federation(subs)
    try:
        ctx = fed.run(ctx)
    except FederationError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    finally:
        fed.manager.close()
    last = ctx.last_metrics
    if last is not None:
        print(f"finished: {ctx.round} rounds, accuracy {last.accuracy:.4f}, loss {last.loss:.4f}")
    return EXIT_OK


def cmd_run(config_path, seed=None) -> int:
    try:
        cfg = load_config(config_path, seed)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    return _execute(cfg)


def cmd_resume(checkpoint_path, config_path, seed=None) -> int:
    try:
        cfg = load_config(config_path, seed)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        ctx = load_checkpoint(checkpoint_path, expected_digest=cfg.digest())
    except DigestMismatchError as exc:
        return _fail(EXIT_DIGEST, str(exc))
    except FormatError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    if check_stop(ctx, cfg.stop):
        print(f"run already complete at round {ctx.round}; nothing to do")
        return EXIT_OK
    print(f"resuming from round {ctx.round}")
    return _execute(cfg, ctx)


def cmd_distribute(config_path, out_csv, seed=None) -> int:
    try:
        cfg = load_config(config_path, seed)
        exp = build_experiment(cfg, with_clients=False)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (InsufficientDataError, FormatError, OSError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(export_heatmap(exp.plan), encoding="utf-8")
    sizes = exp.plan.client_sizes()
    print(f"{exp.plan.num_clients} clients, {sum(sizes)} records "
          f"(min {min(sizes, default=0)}, max {max(sizes, default=0)}) -> {out}")
    return EXIT_OK


def cmd_inspect(metrics_path, csv_out=None) -> int:
    try:
        rows = read_metrics(metrics_path)
    except OSError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    except ValueError as exc:
        return _fail(EXIT_RUNTIME, f"{metrics_path}: {exc}")
    if not rows:
        return _fail(EXIT_RUNTIME, f"{metrics_path}: no rounds recorded")
    best = max(rows, key=lambda r: (r["accuracy"], -r["round"]))
    last = rows[-1]
    print(f"rounds: {len(rows)}")
    print(f"final accuracy: {last['accuracy']:.6f}")
    print(f"final loss: {last['loss']:.6f}")
    print(f"best round: {best['round']} (accuracy {best['accuracy']:.6f})")
    print(f"cumulative bytes: {last['bytes_cumulative']}")
    if csv_out:
        with open(csv_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "accuracy", "loss", "bytes_cumulative"])
            for r in rows:
                w.writerow([r["round"], r["accuracy"], r["loss"], r["bytes_cumulative"]])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a federation from a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("resume", help="continue a run from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("distribute", help="write the client x label heatmap CSV without training")
    p.add_argument("config")
    p.add_argument("out_csv")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("inspect", help="summarise a metrics JSON-lines file")
    p.add_argument("metrics")
    p.add_argument("--csv", dest="csv_out", default=None, help="also write a per-round CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.seed)
    if args.command == "resume":
        return cmd_resume(args.checkpoint, args.config, args.seed)
    if args.command == "distribute":
        return cmd_distribute(args.config, args.out_csv, args.seed)
    return cmd_inspect(args.metrics, args.csv_out)


if __name__ == "__main__":
    sys.exit(main())
