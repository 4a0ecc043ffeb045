"""Command-line pipeline: synth -> prepare -> train -> eval, plus diagnostics.

Every command writes deterministic output: reruns with the same flags and inputs
are byte-identical, including the run manifest.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_interactions, partition_head_tail, read_split, split_dataset, write_split
from .errors import ConfigError, DataError, NumericalError
from .metrics import evaluate
from .model import NormalizedAdjacency, load_checkpoint, save_checkpoint
from .synth import generate_zipf_interactions, write_interactions
from .trainer import TrainConfig, analyze_gradients, recluster, train

logger = logging.getLogger("icmt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
MANIFEST = "manifest.json"
SPLIT_FILES = ("train.txt", "valid.txt", "test.txt", "split.json")


@dataclass
class RunManifest:
    command: str
    config: dict
    dataset: dict
    seed: int | None
    version: str = f"icmt-{__version__}"
    timestamps: dict = field(default_factory=dict)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def fingerprint(paths) -> dict:
    """Interaction count and sha256 over the given files, in order."""
    h = hashlib.sha256()
    count = 0
    for path in paths:
        raw = Path(path).read_bytes()
        h.update(Path(path).name.encode() + b"\0" + raw)
        if path.suffix == ".txt":
            count += sum(1 for line in raw.decode().splitlines() if line.strip() and not line.startswith("#"))
    return {"interactions": count, "sha256": h.hexdigest()}


def stable_timestamp(paths) -> str:
    """``SOURCE_DATE_EPOCH`` if set, otherwise the newest input mtime, in UTC."""
    env = os.environ.get("SOURCE_DATE_EPOCH")
    if env is not None:
        ts = int(env)
    else:
        mtimes = [Path(p).stat().st_mtime for p in paths if Path(p).exists()]
        ts = int(max(mtimes)) if mtimes else 0
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _split_paths(data_dir):
    return [Path(data_dir) / name for name in SPLIT_FILES]


def _data_timestamp(data_dir) -> str:
    """Input timestamp recorded by ``prepare``, so re-preparing does not change it."""
    try:
        return json.loads((Path(data_dir) / MANIFEST).read_text())["timestamps"]["inputs"]
    except (OSError, ValueError, KeyError, TypeError):
        return stable_timestamp(_split_paths(data_dir))


def _write_json(obj, path=None):
    text = json.dumps(obj, indent=2) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    sys.stdout.write(text)


def _load_model(checkpoint, data_dir):
    split = read_split(data_dir)
    p, header = load_checkpoint(checkpoint)
    if (p.n_users, p.n_items) != (split.n_users, split.n_items):
        raise DataError(f"checkpoint has {p.n_users} users x {p.n_items} items but the dataset has "
                        f"{split.n_users} x {split.n_items}")
    adj = NormalizedAdjacency(split.train, split.n_users, split.n_items) if p.model_kind == "lgc" else None
    return p, header, split, adj


def cmd_synth(args):
    pairs = generate_zipf_interactions(args.users, args.items, args.zipf, args.seed,
                                       per_user=args.per_user, affinity=args.affinity)
    header = (f"synthetic zipf={args.zipf} users={args.users} items={args.items} "
              f"seed={args.seed} per_user={args.per_user} affinity={args.affinity}")
    write_interactions(args.out, pairs, header)
    logger.info("wrote %d interactions to %s", len(pairs), args.out)


def cmd_prepare(args):
    ds = load_interactions(args.input, min_core=args.min_core)
    split = split_dataset(ds, tuple(args.ratios), seed=args.seed)
    out = Path(args.out)
    write_split(split, out)
    manifest = RunManifest(
        command="prepare",
        config={"input": Path(args.input).name, "min_core": args.min_core, "ratios": list(split.ratios)},
        dataset=fingerprint(_split_paths(out)),
        seed=args.seed,
        timestamps={"inputs": stable_timestamp([args.input])},
    )
    manifest.write(out)
    logger.info("%d users, %d items, %d/%d/%d train/valid/test", split.n_users, split.n_items,
                len(split.train), len(split.valid), len(split.test))


def read_config(path) -> TrainConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return TrainConfig.from_dict(raw)


def cmd_train(args):
    cfg = read_config(args.config)
    split = read_split(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, history = train(cfg, split)
    save_checkpoint(params, out / "checkpoint.bin", seed=cfg.seed)
    history.write_csv(out / "history.csv")
    manifest = RunManifest(
        command="train",
        config=cfg.to_dict(),
        dataset=fingerprint(_split_paths(args.data)),
        seed=cfg.seed,
        timestamps={"data": _data_timestamp(args.data), "config": stable_timestamp([args.config])},
    )
    manifest.write(out)
    best = history.best
    if best is not None:
        logger.info("best validation ndcg@%d=%.4f after %d batches", cfg.eval_n, best.ndcg, best.batches)


def cmd_eval(args):
    p, _, split, adj = _load_model(args.checkpoint, args.data)
    if args.n > split.n_items:
        raise ConfigError(f"N={args.n} exceeds the number of items ({split.n_items})")
    partition = partition_head_tail(split.train_dataset())
    if args.split == "test":
        truth, exclude = split.test, np.concatenate([split.train, split.valid])
    else:
        truth, exclude = split.valid, split.train
    if args.include_seen:
        exclude = np.empty((0, 2), dtype=np.int64)
    report = evaluate(p, adj, truth, exclude, partition, n=args.n)
    _write_json(report.to_dict(), args.out)


def cmd_analyze_gradients(args):
    p, _, split, adj = _load_model(args.checkpoint, args.data)
    report = analyze_gradients(p, split, top_pairs=args.top_pairs, adj=adj, seed=args.seed)
    _write_json(report, args.out)


def cmd_inspect_clusters(args):
    p, _, split, adj = _load_model(args.checkpoint, args.data)
    rng = np.random.default_rng(args.seed)
    assign = recluster(p, adj, args.K, rng)
    pop = split.train_dataset().popularity
    is_tail = partition_head_tail(pop).is_tail
    rows = [(i, int(assign.assign[i]), int(pop[i]), "tail" if is_tail[i] else "head")
            for i in range(split.n_items)]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "cluster_id", "popularity", "head_or_tail"])
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--version", action="version", version=f"icmt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic long-tail interaction log")
    s.add_argument("--users", type=_positive_int, required=True)
    s.add_argument("--items", type=_positive_int, required=True)
    s.add_argument("--zipf", type=_nonneg_float, default=1.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--per-user", type=_positive_int, default=30, help="mean interactions per user")
    s.add_argument("--affinity", type=float, default=64.0,
                   help="own-group / other-group preference ratio for tail items")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", help="filter and split an interaction log")
    s.add_argument("--input", required=True)
    s.add_argument("--min-core", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ratios", type=float, nargs=3, default=(0.8, 0.1, 0.1), metavar=("TRAIN", "VALID", "TEST"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train a model from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True, help="directory written by prepare")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="top-N metrics of a checkpoint as JSON")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=_positive_int, default=20)
    s.add_argument("--split", choices=("test", "valid"), default="test")
    s.add_argument("--include-seen", action="store_true",
                   help="rank items the user already has in train/valid instead of excluding them")
    s.add_argument("--out", help="also write the report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze-gradients", help="item gradient norms and head/tail gradient cosines")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--top-pairs", type=_positive_int, default=5)
    s.add_argument("--seed", type=int, default=0, help="seed for picking tail items")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_gradients)

    s = sub.add_parser("inspect-clusters", help="dump the item clustering of a checkpoint as CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--K", type=_positive_int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_inspect_clusters)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"icmt {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"icmt {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"icmt {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"icmt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
