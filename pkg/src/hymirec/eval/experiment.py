"""Train/evaluate orchestration for ablation variants and sweeps."""

from __future__ import annotations

import csv
import io as _io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..codebook import ResidualQuantizer
from ..config import VARIANTS, RunConfig, stream_seed
from ..exceptions import ConfigError
from ..recommender import MultiInterestRecommender
from ..retrieval import RetrievalIndex, retrieve_topk
from .data import ItemStore
from .metrics import MetricsReport
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    config: RunConfig
    metrics: MetricsReport
    curve: list = field(repr=False)              # per-step training records
    min_query_grad_mass: float = 0.0
    seconds: float = 0.0

    def row(self):
        c = self.config
        out = {"variant": c.variant, "s": c.s, "w": c.w, "seed": c.seed}
        out.update({f"recall@{k}": self.metrics.recall_at[k] for k in c.ks})
        out.update({f"ndcg@{k}": self.metrics.ndcg_at[k] for k in c.ks})
        return out


def csv_columns(ks):
    return (["variant", "s", "w", "seed"] + [f"recall@{k}" for k in ks]
            + [f"ndcg@{k}" for k in ks])


def rows_to_csv(rows, ks):
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=csv_columns(ks), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def build_store(cfg: RunConfig, item_ids, embeddings, cache=None):
    """Item store for a variant: raw history for no_csrc, otherwise the
    reconstruction through a cosine (or, for euclid_csrc, Euclidean)
    residual codebook. ``cache`` shares codebooks between variants."""
    if cfg.variant == "no_csrc":
        return ItemStore(item_ids, embeddings)
    metric = "euclidean" if cfg.variant == "euclid_csrc" else cfg.cb_metric
    key = (metric, cfg.cb_layers, cfg.cb_k, cfg.cb_pool, cfg.kmeans_iters, cfg.seed, id(embeddings))
    if cache is not None and key in cache:
        quant = cache[key]
    else:
        quant = ResidualQuantizer(n_layers=cfg.cb_layers, n_clusters=cfg.cb_k, metric=metric,
                                  max_iter=cfg.kmeans_iters, base_pool_size=cfg.cb_pool,
                                  random_state=stream_seed(cfg.seed, "codebook"))
        quant.fit(embeddings)
        if cache is not None:
            cache[key] = quant
    return ItemStore(item_ids, embeddings, quant.codebook_, quant.encode(embeddings))


def evaluate(est, store, sequences, ks, window, index=None, users=None):
    """Recall/NDCG on each user's final ``window`` items."""
    index = index or RetrievalIndex(store.item_ids, store.embeddings)
    users = range(len(sequences)) if users is None else users
    seqs = [sequences[u] for u in users if len(sequences[u]) > window]
    splits = [s.eval_split(est.n_last, est.l_max, window) for s in seqs]
    R = est.predict(store, splits)
    K = max(ks)
    rankings = []
    for sp, r in zip(splits, R):
        seen = set(sp.history) | set(sp.last_n)
        rankings.append([i for i, _ in retrieve_topk(index, r, K, exclude=seen)])
    return MetricsReport.from_rankings(rankings, [sp.window for sp in splits], ks,
                                       user_ids=[s.user_id for s in seqs])


def synthetic_for(cfg: RunConfig):
    return generate_synthetic(SyntheticSpec.from_config(cfg, seed=stream_seed(cfg.seed, "synthetic")))


def run_experiment(cfg: RunConfig, data=None, cache=None, log_path=None) -> ExperimentResult:
    """Train one variant on ``data`` (synthetic from the config if omitted)
    and evaluate it on the held-out final windows."""
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    t0 = time.perf_counter()
    data = data if data is not None else synthetic_for(cfg)
    store = build_store(cfg, data.item_ids, data.embeddings, cache=cache)
    est = MultiInterestRecommender.from_config(cfg)
    est.fit(store, data.sequences, log_path=log_path)
    metrics = evaluate(est, store, data.sequences, cfg.ks, cfg.w)
    masses = np.array([r["per_query_grad_mass"] for r in est.history_])
    min_mass = float(masses.mean(0).min()) if len(masses) else 0.0
    res = ExperimentResult(cfg, metrics, est.history_, min_mass, time.perf_counter() - t0)
    res.estimator = est
    log.info("%s s=%d w=%d seed=%d recall@%d=%.4f (%.1fs)", cfg.variant, cfg.s, cfg.w, cfg.seed,
             cfg.ks[min(1, len(cfg.ks) - 1)], list(metrics.recall_at.values())[min(1, len(cfg.ks) - 1)],
             res.seconds)
    return res


def run_sweep(cfg: RunConfig, variants=None, s_values=None, w_values=None, data=None):
    """Every (variant, s, w) combination on one shared dataset/codebook."""
    variants = variants or [cfg.variant]
    s_values = s_values or [cfg.s]
    w_values = w_values or [cfg.w]
    data = data if data is not None else synthetic_for(cfg)
    cache = {}
    results = []
    for v in variants:
        for s in s_values:
            for w in w_values:
                results.append(run_experiment(cfg.replace(variant=v, s=s, w=w), data, cache))
    return results
