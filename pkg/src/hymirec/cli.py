"""``hymirec`` command-line entry point.

Every subcommand reads a flat ``key = value`` config (``--config``) with
``--set key=value`` overrides, echoes the resolved config into a run
metadata file next to its main output, and derives all randomness from
``seed`` through named streams. Exit codes: 0 ok, 2 config error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .codebook import build_codebook, compression_ratio, decode, encode, mean_cosine_fidelity
from .config import VARIANTS, RunConfig, stream, stream_seed
from .exceptions import ConfigError, DataError, DegenerateVectorError, NumericError
from .eval.data import ItemStore
from .eval.experiment import evaluate, rows_to_csv, synthetic_for
from .recommender import MultiInterestRecommender
from .retrieval import RetrievalIndex, serve_session

log = logging.getLogger("hymirec")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config before running")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS threads (falls back to HYMIREC_THREADS)")


def build_parser():
    parser = _Parser(prog="hymirec", description="Hybrid multi-interest recommender toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a planted multi-interest dataset")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("build-codebook", help="fit a residual codebook on item embeddings")
    _common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="encode item embeddings into codes")
    _common(p)
    p.add_argument("--codebook", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--check", action="store_true",
                   help="decode again and print cosine fidelity and compression ratio")

    p = sub.add_parser("train", help="train the interest model")
    _common(p)
    _data_args(p)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-step training log (JSONL)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="halt after this many total steps")

    p = sub.add_parser("evaluate", help="Recall/NDCG on held-out windows")
    _common(p)
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="metrics CSV")

    p = sub.add_parser("serve-sim", help="replay one user's events through the serving loop")
    _common(p)
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, default=0, help="user id to replay")
    p.add_argument("--events", type=int, default=25, help="number of trailing events to replay")
    p.add_argument("--out", required=True, help="session log (JSONL)")
    return parser


def _data_args(p):
    p.add_argument("--embeddings", required=True)
    p.add_argument("--sequences", required=True)
    p.add_argument("--codebook", help="codebook file; history items are reconstructed from codes")
    p.add_argument("--codes", help="codes file matching --codebook")


# -- helpers ------------------------------------------------------------------

def resolve_config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        return RunConfig.from_file(args.config, overrides)
    return RunConfig().with_overrides(overrides)


def _threads(args, cfg):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HYMIREC_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"HYMIREC_THREADS must be an integer, got {env!r}") from exc
    return cfg.threads


def _write_run_metadata(out, command, cfg, inputs):
    meta = {"command": command, "config": cfg.to_dict(), "seed": cfg.seed,
            "input_hash": io.file_digest(*inputs) if inputs else None,
            "inputs": [Path(p).name for p in inputs]}
    Path(str(out) + ".run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _load_embeddings(path):
    ids, E = io.load_embeddings(path)
    if len(ids) == 0:
        raise DataError(f"{path}: embeddings file is empty")
    return ids, E


def _store(args, cfg):
    ids, E = _load_embeddings(args.embeddings)
    if (args.codebook is None) != (args.codes is None):
        raise ConfigError("--codebook and --codes must be given together")
    if args.codebook is None or cfg.variant == "no_csrc":
        return ItemStore(ids, E)
    cb = io.load_codebook(args.codebook, metric=_metric(cfg))
    code_ids, q = io.load_codes(args.codes)
    if len(code_ids) != len(ids) or np.any(code_ids != ids):
        raise DataError("codes file does not cover the embedding ids in the same order")
    return ItemStore(ids, E, cb, q)


def _metric(cfg):
    return "euclidean" if cfg.variant == "euclid_csrc" else cfg.cb_metric


def _inputs(args, *names):
    return [getattr(args, n) for n in names if getattr(args, n, None)]


# -- commands -----------------------------------------------------------------

def cmd_gen_synthetic(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = synthetic_for(cfg)
    io.save_embeddings(out / "items.embt", data.item_ids, data.embeddings)
    io.save_sequences(out / "sequences.jsonl", data.sequences)
    (out / "labels.json").write_text(json.dumps(data.labels(), sort_keys=True) + "\n")
    _write_run_metadata(out / "items.embt", "gen-synthetic", cfg, [])
    print(f"wrote {len(data.item_ids)} items and {len(data.sequences)} sequences to {out}")


def cmd_build_codebook(args, cfg):
    ids, E = _load_embeddings(args.embeddings)
    rng = stream(cfg.seed, "codebook")
    pool = E
    if cfg.cb_pool < len(E):
        pool = E[np.sort(rng.choice(len(E), cfg.cb_pool, replace=False))]
    cb = build_codebook(pool, layers=cfg.cb_layers, k=cfg.cb_k,
                        seed=stream_seed(cfg.seed, "codebook", 1), metric=_metric(cfg),
                        max_iters=cfg.kmeans_iters)
    io.save_codebook(args.out, cb)
    _write_run_metadata(args.out, "build-codebook", cfg, [args.embeddings])
    print(f"codebook L={cb.n_layers} k={cb.n_clusters} d={cb.dim} -> {args.out}")


def cmd_encode(args, cfg):
    cb = io.load_codebook(args.codebook, metric=_metric(cfg))
    ids, E = _load_embeddings(args.embeddings)
    q = encode(E, cb)
    io.save_codes(args.out, ids, q)
    _write_run_metadata(args.out, "encode", cfg, [args.codebook, args.embeddings])
    print(f"encoded {len(ids)} items -> {args.out}")
    if args.check:
        fid = mean_cosine_fidelity(E, decode(q, cb))
        print(f"mean cosine fidelity: {fid:.6f}")
        print(f"compression ratio: {compression_ratio(cb.dim, cb.n_layers):.2f}")


def cmd_train(args, cfg):
    store = _store(args, cfg)
    seqs = io.load_sequences(args.sequences)
    est = MultiInterestRecommender.from_config(cfg)
    if args.log and not args.resume and Path(args.log).exists():
        Path(args.log).unlink()
    est.fit(store, seqs, log_path=args.log, resume=args.resume, stop_at=args.stop_at)
    est.save(args.out)
    _write_run_metadata(args.out, "train", cfg,
                        _inputs(args, "embeddings", "sequences", "codebook", "codes", "resume"))
    last = est.history_[-1]["total"] if est.history_ else float("nan")
    print(f"trained {cfg.variant} to step {est.optimizer_.t}; final loss {last:.6f} -> {args.out}")


def cmd_evaluate(args, cfg):
    est = MultiInterestRecommender.load(args.checkpoint)
    cfg = cfg.replace(variant=est.variant)
    store = _store(args, cfg)
    seqs = io.load_sequences(args.sequences)
    report = evaluate(est, store, seqs, cfg.ks, est.window)
    row = {"variant": est.variant, "s": est.n_interests, "w": est.window, "seed": est.random_state}
    row.update({f"recall@{k}": report.recall_at[k] for k in cfg.ks})
    row.update({f"ndcg@{k}": report.ndcg_at[k] for k in cfg.ks})
    Path(args.out).write_text(rows_to_csv([row], cfg.ks))
    _write_run_metadata(args.out, "evaluate", cfg,
                        _inputs(args, "checkpoint", "embeddings", "sequences", "codebook", "codes"))
    print(Path(args.out).read_text(), end="")


def cmd_serve_sim(args, cfg):
    est = MultiInterestRecommender.load(args.checkpoint)
    cfg = cfg.replace(variant=est.variant)
    store = _store(args, cfg)
    seqs = {s.user_id: s for s in io.load_sequences(args.sequences)}
    if args.user not in seqs:
        raise DataError(f"user {args.user} not in {args.sequences}")
    items = list(seqs[args.user].item_ids)
    if not 1 <= args.events <= len(items):
        raise DataError(f"--events must be in [1, {len(items)}] for user {args.user}")
    history, events = items[:-args.events], items[-args.events:]
    index = RetrievalIndex(store.item_ids, store.embeddings)
    session = serve_session(events, lambda seen: est.infer_ids(store, seen), index,
                            refresh_period=cfg.refresh_period, K=cfg.K,
                            user_id=args.user, history=history)
    io.write_jsonl(args.out, session)
    _write_run_metadata(args.out, "serve-sim", cfg,
                        _inputs(args, "checkpoint", "embeddings", "sequences", "codebook", "codes"))
    versions = sorted({r["version"] for r in session})
    print(f"{len(session)} events, {len(versions)} interest versions -> {args.out}")


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "build-codebook": cmd_build_codebook,
    "encode": cmd_encode,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "serve-sim": cmd_serve_sim,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(cfg.to_text(), end="")
        threads = _threads(args, cfg)
        with threadpool_limits(limits=threads if threads > 0 else None):
            COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DegenerateVectorError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
