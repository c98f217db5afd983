"""Estimator wrapping the interest model, its training objective and
query-splitting retrieval."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import io
from .config import stream
from .dmil import WindowTargets, ablation_variant, sample_negatives
from .exceptions import DataError, NumericError
from .models import Adam, InterestModel, ModelConfig, cosine_schedule
from .retrieval import RetrievalIndex, retrieve_topk

log = logging.getLogger(__name__)

# variant -> (objective, model overrides, uses window targets)
_VARIANTS = {
    "full": ("dmil", {}, True),
    "no_light": ("dmil", {"use_light": False}, True),
    "no_csrc": ("dmil", {}, True),
    "euclid_csrc": ("dmil", {}, True),
    "no_indicator": ("dmil", {"use_indicator": False}, True),
    "no_dmil": ("no_dmil", {"n_interests": 1}, False),
    "no_window": ("no_window", {}, False),
    "max_matching": ("max_matching", {}, True),
}


class MultiInterestRecommender(BaseEstimator):
    """Hybrid multi-interest recommender.

    ``fit(store, sequences)`` trains on every user's sequence minus its final
    ``window`` items (held out for evaluation). ``predict`` returns one set
    of unit interest vectors per user; ``recommend`` retrieves top-K items.
    """

    def __init__(self, n_interests=3, n_coarse=0, d_model=64, n_heads=4,
                 layers_light=2, layers_refined=4, d_ff=256, n_last=30, l_max=300,
                 window=8, variant="full", lr=1e-3, warmup_ratio=0.1, batch_size=16,
                 n_steps=1000, n_negatives=8, temperature=0.1, loss_norm="window",
                 negatives="universe", clip_norm=1.0, random_state=2020):
        self.n_interests = n_interests
        self.n_coarse = n_coarse
        self.d_model = d_model
        self.n_heads = n_heads
        self.layers_light = layers_light
        self.layers_refined = layers_refined
        self.d_ff = d_ff
        self.n_last = n_last
        self.l_max = l_max
        self.window = window
        self.variant = variant
        self.lr = lr
        self.warmup_ratio = warmup_ratio
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.n_negatives = n_negatives
        self.temperature = temperature
        self.loss_norm = loss_norm
        self.negatives = negatives
        self.clip_norm = clip_norm
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg):
        return cls(n_interests=cfg.s, n_coarse=cfg.s_c, d_model=cfg.d_model, n_heads=cfg.heads,
                   layers_light=cfg.layers_light, layers_refined=cfg.layers_refined,
                   d_ff=cfg.d_ff, n_last=cfg.n_last, l_max=cfg.l_max, window=cfg.w,
                   variant=cfg.variant, lr=cfg.lr, warmup_ratio=cfg.warmup_ratio,
                   batch_size=cfg.batch, n_steps=cfg.steps, n_negatives=cfg.m,
                   temperature=cfg.tau, loss_norm=cfg.loss_norm, negatives=cfg.negatives,
                   clip_norm=cfg.clip_norm, random_state=cfg.seed)

    # ------------------------------------------------------------------
    def _variant(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        return _VARIANTS[self.variant]

    def _model_config(self, dim):
        _, overrides, _ = self._variant()
        kw = dict(dim=dim, d_model=self.d_model, n_heads=self.n_heads,
                  layers_light=self.layers_light, layers_refined=self.layers_refined,
                  d_ff=self.d_ff, n_interests=self.n_interests, n_coarse=self.n_coarse,
                  n_last=self.n_last, l_max=self.l_max)
        kw.update(overrides)
        return ModelConfig(**kw)

    def _train_users(self, sequences):
        # need at least one input item and one target before the held-out window
        users = [u for u, s in enumerate(sequences) if len(s) - self.window >= 2]
        if not users:
            raise DataError("no sequence is long enough to train on")
        return users

    def _sample_batch(self, sequences, users, rng, train_window):
        splits, chosen = [], []
        replace = len(users) < self.batch_size
        for u in rng.choice(users, size=self.batch_size, replace=replace):
            seq = sequences[u]
            end = len(seq) - self.window          # held-out window starts here
            hi = end - 1                          # last cut still leaving a target
            cut = int(rng.integers(1, hi + 1))
            sp = seq.split(cut, self.n_last, self.l_max, train_window)
            sp.window = sp.window[:end - cut]
            splits.append(sp)
            chosen.append(int(u))
        return splits, chosen

    def fit(self, store, sequences, log_path=None, resume=None, callback=None, stop_at=None):
        """Train. ``resume`` is a checkpoint path written by ``save``; the
        run continues from its step with the same schedule and streams.
        ``stop_at`` halts after that many steps in total (the learning-rate
        schedule still spans ``n_steps``), so a run can be checkpointed
        part way and resumed later."""
        kind, _, windowed = self._variant()
        if resume is not None:
            self._restore(resume)
        else:
            self.model_ = InterestModel(self._model_config(store.dim),
                                        seed=stream(self.random_state, "model").integers(2 ** 31))
            self.optimizer_ = Adam(self.model_.params, lr=self.lr, clip_norm=self.clip_norm)
            self.history_ = []
        if self.model_.config.dim != store.dim:
            raise DataError(f"store dim {store.dim} != model dim {self.model_.config.dim}")
        users = self._train_users(sequences)
        train_window = self.window if windowed else 1
        model, opt = self.model_, self.optimizer_
        start = opt.t
        end = self.n_steps if stop_at is None else min(int(stop_at), self.n_steps)
        for step in range(start, end):
            rng = stream(self.random_state, "train", step)
            splits, chosen = self._sample_batch(sequences, users, rng, train_window)
            h, hv, l, lv = store.batch(splits)
            R = model.forward(h, hv, l, lv)
            rec = self._loss_and_grad(store, splits, R, kind, train_window, rng)
            if not np.isfinite(rec["total"]):
                raise NumericError(f"non-finite loss at step {step}")
            grads = model.backward(rec.pop("grad"))
            lr = cosine_schedule(step, self.n_steps, self.lr, self.warmup_ratio)
            opt.step(model.params, grads, lr=lr)
            rec = {"step": step, "lr": lr, **rec}
            self.history_.append(rec)
            if log_path is not None:
                io.write_jsonl(log_path, [rec], append=True)
            if callback is not None:
                callback(self, rec)
        self.n_features_in_ = store.dim
        return self

    def _loss_and_grad(self, store, splits, R, kind, train_window, rng):
        B, s, d = R.shape
        dR = np.zeros_like(R)
        total = 0.0
        per_query = np.zeros(s)
        mass = np.zeros(s)
        matched = np.zeros(s, dtype=np.int64)
        target_rows = [store.rows(sp.window) for sp in splits]
        for b, sp in enumerate(splits):
            rows = target_rows[b]
            targets = WindowTargets(store.embeddings[rows], rows)
            if self.negatives == "in_batch":
                pool = np.setdiff1d(np.concatenate(target_rows), rows)
                if len(pool) < self.n_negatives:
                    raise DataError("not enough in-batch negatives")
                neg_rows = rng.choice(pool, size=self.n_negatives, replace=False)
            else:
                exclude = np.concatenate([rows, store.rows(sp.last_n)])
                neg_rows = sample_negatives(rng, len(store), self.n_negatives, exclude)
            norm = train_window if self.loss_norm == "window" else len(rows)
            report = ablation_variant(kind, targets, R[b], store.embeddings[neg_rows],
                                      tau=self.temperature, window=norm,
                                      seed=int(rng.integers(2 ** 31)))
            dR[b] = report.grad / B
            total += report.total / B
            per_query += report.per_query / B
            mass += report.per_query_grad_mass / B
            for q, members in report.matched_groups:
                matched[q] += len(members)
            if kind != "dmil":
                used = np.flatnonzero(report.per_query_grad_mass > 0)
                matched[used] += 1
        return {"total": float(total), "per_query": per_query.tolist(),
                "per_query_grad_mass": mass.tolist(), "matched_groups": matched.tolist(),
                "grad": dR}

    # ------------------------------------------------------------------
    def predict(self, store, splits, batch_size=256):
        """Interest vectors (n, s, d) for a list of Splits."""
        check_is_fitted(self, "model_")
        out = []
        for i in range(0, len(splits), batch_size):
            h, hv, l, lv = store.batch(splits[i:i + batch_size])
            out.append(self.model_.forward(h, hv, l, lv, cache=False))
        if not out:
            return np.zeros((0, self.model_.config.n_interests, store.dim))
        return np.concatenate(out)

    def infer_ids(self, store, item_ids):
        """Interests for a raw interaction history (most recent last)."""
        from .eval.data import UserSequence
        seq = UserSequence(-1, list(item_ids))
        sp = seq.split(len(seq), self.n_last, self.l_max, 0)
        return self.predict(store, [sp])[0]

    def recommend(self, store, index: RetrievalIndex, splits, K, exclude_seen=True):
        """Top-K (item_id, score) lists, one per split."""
        R = self.predict(store, splits)
        out = []
        for sp, r in zip(splits, R):
            excl = set(sp.history) | set(sp.last_n) if exclude_seen else None
            out.append(retrieve_topk(index, r, K, exclude=excl))
        return out

    # ------------------------------------------------------------------
    def save(self, path, dtype="f32"):
        check_is_fitted(self, "model_")
        tensors = dict(self.model_.params)
        tensors.update({f"opt.m.{k}": v for k, v in self.optimizer_.m.items()})
        tensors.update({f"opt.v.{k}": v for k, v in self.optimizer_.v.items()})
        meta = {"params": self.get_params(), "model": self.model_.config.to_dict(),
                "step": self.optimizer_.t}
        io.save_checkpoint(path, tensors, meta, dtype=dtype)

    def _restore(self, path):
        tensors, meta = io.load_checkpoint(path)
        cfg = ModelConfig(**meta["model"])
        params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
        self.model_ = InterestModel(cfg, params=params)
        self.optimizer_ = Adam(params, lr=self.lr, clip_norm=self.clip_norm)
        for k in params:
            self.optimizer_.m[k] = tensors[f"opt.m.{k}"]
            self.optimizer_.v[k] = tensors[f"opt.v.{k}"]
        self.optimizer_.t = int(meta["step"])
        self.history_ = []

    @classmethod
    def load(cls, path):
        tensors, meta = io.load_checkpoint(path)
        est = cls(**meta["params"])
        est._restore(path)
        est.n_features_in_ = est.model_.config.dim
        return est
