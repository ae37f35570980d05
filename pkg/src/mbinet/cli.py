"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from mbinet import checkpoint as ckpt_io
from mbinet.audio import load_stereo
from mbinet.config import load_config
from mbinet.dataset import parse_manifest
from mbinet.embeddings import MockProvider, channel_key, write_fixture
from mbinet.errors import DataError, MBIError
from mbinet.hearing_loss import Audiogram, ListenerProfile, apply_hearing_loss
from mbinet.metrics import write_report
from mbinet.training import evaluate, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mbinet", description="Non-intrusive binaural intelligibility prediction toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--resume", action="store_true", help="continue from last.ckpt in the output dir")
    t.add_argument("--workers", type=int, default=None)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--manifest", required=True, type=Path)
    e.add_argument("--split", required=True, choices=("train", "dev", "all"))
    e.add_argument("--out", type=Path, default=None, help="report path (default: next to the checkpoint)")
    e.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("predict", help="score one WAV file for one listener")
    r.add_argument("--checkpoint", required=True, type=Path)
    r.add_argument("--wav", required=True, type=Path)
    r.add_argument("--listener", required=True, help="listener JSON file or inline JSON object")
    r.add_argument("--frames", action="store_true", help="include per-frame merged scores")

    f = sub.add_parser("fixtures", help="write mock-provider embeddings as fixture files")
    f.add_argument("--manifest", required=True, type=Path)
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--dim", required=True, type=int)
    f.add_argument("--seed", required=True, type=int)
    f.add_argument("--no-hl", action="store_true", help="embed unprocessed audio")

    i = sub.add_parser("inspect", help="print checkpoint config, shapes and checksums")
    i.add_argument("--checkpoint", required=True, type=Path)
    return p


def _listener(arg: str) -> ListenerProfile:
    text = arg if arg.lstrip().startswith("{") else Path(arg).read_text()
    try:
        d = json.loads(text)
        return ListenerProfile(str(d["listener_id"]), Audiogram(tuple(d["left"])), Audiogram(tuple(d["right"])))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid listener description: {exc}") from None


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg = cfg.replace(workers=args.workers)
    result = train(cfg, resume=args.resume)
    _emit({"best_checkpoint": str(result.best_path), "last_checkpoint": str(result.last_path),
           "log": str(result.log_path), "best_epoch": result.best_epoch,
           "epochs": len(result.history), "stopped_early": result.stopped_early})


def cmd_eval(args) -> None:
    records = evaluate(args.checkpoint, args.manifest, args.split, workers=args.workers)
    out = args.out or args.checkpoint.with_suffix(f".{args.split}.report.jsonl")
    write_report(out, records)
    print(out)


def cmd_predict(args) -> None:
    _emit(predict(args.checkpoint, args.wav, _listener(args.listener), frames=args.frames))


def cmd_fixtures(args) -> None:
    args.out.mkdir(parents=True, exist_ok=True)
    provider = MockProvider(args.dim, args.seed)
    count = 0
    for e in parse_manifest(args.manifest):
        w = load_stereo(e.signal_path)
        if not args.no_hl:
            w = apply_hearing_loss(w, e.listener)
        for side in ("left", "right"):
            key = channel_key(e.utterance_id, side)
            write_fixture(args.out, key, provider.embed(getattr(w, side), key))
            count += 1
    _emit({"fixtures": count, "dir": str(args.out), "dim": args.dim})


def cmd_inspect(args) -> None:
    ck = ckpt_io.load(args.checkpoint)
    _emit({"config": ck.config.to_dict(), "meta": ck.meta})
    sums = ckpt_io.checksums(ck.params)
    for name, arr in ck.params.items():
        _emit({"name": name, "shape": list(arr.shape), "sha256_16": sums[name]})


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
             "fixtures": cmd_fixtures, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("MBI_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(max(1, getattr(args, "workers", None) or 1))
    try:
        _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"mbinet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (MBIError, RuntimeError, OSError) as exc:
        print(f"mbinet: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
