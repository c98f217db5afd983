"""Multi-layer residual codebook with a cosine (or Euclidean) metric.

Each layer clusters the residuals left by the previous layer. Under the
cosine metric the residual is the *projection* residual
``e - (e.c / ||c||^2) c``, which is orthogonal to the chosen centroid and
keeps the magnitude along ``c`` as a per-layer scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DataError, DegenerateVectorError
from .numerics import balanced_kmeans

EPS_ZERO = 1e-8


@dataclass(frozen=True)
class ResidualCodebook:
    centroids: np.ndarray          # (L, k, d)
    metric: str = "cosine"

    @property
    def n_layers(self):
        return self.centroids.shape[0]

    @property
    def n_clusters(self):
        return self.centroids.shape[1]

    @property
    def dim(self):
        return self.centroids.shape[2]


@dataclass(frozen=True)
class QuantCodes:
    """Codes for a batch of items: one centroid index and one projection
    coefficient per layer."""
    codes: np.ndarray              # (N, L) int
    projections: np.ndarray        # (N, L) float

    def __len__(self):
        return self.codes.shape[0]

    def __getitem__(self, idx):
        return QuantCodes(self.codes[idx], self.projections[idx])


def _filler_centroids(n, d, scale):
    C = np.zeros((n, d))
    C[np.arange(n), np.arange(n) % d] = scale
    return C


def build_codebook(base_pool, layers=3, k=256, seed=0, metric="cosine",
                   max_iters=50):
    """Fit an L-layer residual codebook on ``base_pool``."""
    X = np.asarray(base_pool, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("base_pool must be 2-D")
    n, d = X.shape
    if layers < 1 or k < 1:
        raise ValueError("layers and k must be >= 1")
    if n < k:
        raise DataError(f"base pool has {n} items, fewer than k={k} centroids per layer")
    if metric not in ("cosine", "euclidean"):
        raise ValueError(f"unknown metric {metric!r}")

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    layer_seeds = ss.spawn(layers)
    residual = X.copy()
    tables = []
    for i in range(layers):
        norms = np.linalg.norm(residual, axis=1)
        active = norms >= EPS_ZERO
        n_active = int(active.sum())
        scale = float(norms[active].mean()) if n_active else 1.0
        if n_active >= k:
            C, _ = balanced_kmeans(residual[active], k, max_iters=max_iters,
                                   seed=layer_seeds[i], metric=metric)
        elif n_active > 0:
            # too few non-vanishing residuals: each becomes its own centroid
            C = np.vstack([residual[active], _filler_centroids(k - n_active, d, scale)])
        else:
            C = _filler_centroids(k, d, scale)
        if metric == "cosine" and np.any(np.linalg.norm(C, axis=1) == 0):
            raise DegenerateVectorError(f"layer {i} produced a zero-norm centroid")
        tables.append(C)
        codes, proj, residual = _encode_layer(residual, C, metric)
    return ResidualCodebook(np.stack(tables), metric)


def _encode_layer(residual, C, metric, last_code=None):
    """Quantize residuals against one centroid table.

    Returns (codes, projections, next_residual). Residuals below EPS_ZERO
    keep ``last_code`` (or 0) with projection 0 and stay unchanged.
    """
    norms = np.linalg.norm(residual, axis=1)
    live = norms >= EPS_ZERO
    n = residual.shape[0]
    codes = np.zeros(n, dtype=np.int64) if last_code is None else last_code.copy()
    proj = np.zeros(n)
    nxt = residual.copy()
    if not live.any():
        return codes, proj, nxt
    R = residual[live]
    if metric == "cosine":
        cn = np.linalg.norm(C, axis=1)
        S = (R @ C.T) / (norms[live, None] * cn[None, :])
        b = np.argmax(S, axis=1)
        c = C[b]
        p = (R * c).sum(1) / (cn[b] ** 2)
        nxt[live] = R - p[:, None] * c
    else:
        d2 = (R * R).sum(1)[:, None] - 2.0 * R @ C.T + (C * C).sum(1)[None, :]
        b = np.argmin(d2, axis=1)
        p = np.ones(len(b))
        nxt[live] = R - C[b]
    codes[live] = b
    proj[live] = p
    return codes, proj, nxt


def encode(embeddings, cb: ResidualCodebook, return_residuals=False):
    """Encode one embedding (1-D) or a batch (2-D) into QuantCodes."""
    E = np.asarray(embeddings, dtype=np.float64)
    single = E.ndim == 1
    E = np.atleast_2d(E)
    if E.shape[1] != cb.dim:
        raise ValueError(f"embedding dim {E.shape[1]} != codebook dim {cb.dim}")
    L = cb.n_layers
    codes = np.zeros((E.shape[0], L), dtype=np.int64)
    proj = np.zeros((E.shape[0], L))
    residuals = []
    res = E.copy()
    last = None
    for i in range(L):
        b, p, res_next = _encode_layer(res, cb.centroids[i], cb.metric, last)
        codes[:, i] = b
        proj[:, i] = p
        residuals.append(res_next)
        res = res_next
        last = b
    q = QuantCodes(codes[0], proj[0]) if single else QuantCodes(codes, proj)
    if return_residuals:
        return q, (np.stack(residuals, 1)[0] if single else np.stack(residuals, 1))
    return q


def decode(q: QuantCodes, cb: ResidualCodebook, n_layers=None):
    """Reconstruct embeddings as sum_i projections[i] * centroid(i, codes[i]).

    ``n_layers`` truncates to a prefix of the layers.
    """
    codes = np.asarray(q.codes)
    proj = np.asarray(q.projections, dtype=np.float64)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    proj = np.atleast_2d(proj)
    L = cb.n_layers if n_layers is None else n_layers
    if codes.shape[1] != cb.n_layers or proj.shape[1] != cb.n_layers:
        raise ValueError(f"expected {cb.n_layers} codes per item, got {codes.shape[1]}")
    if np.any(codes < 0) or np.any(codes >= cb.n_clusters):
        raise IndexError(f"code index out of range [0, {cb.n_clusters})")
    out = np.zeros((codes.shape[0], cb.dim))
    for i in range(L):
        out += proj[:, i, None] * cb.centroids[i][codes[:, i]]
    return out[0] if single else out


def compression_ratio(d, L, index_bytes=4, float_bytes=4) -> float:
    """Raw float storage over code storage: (d*float) / (L*(index+float))."""
    if min(d, L, index_bytes, float_bytes) <= 0:
        raise ValueError("all sizes must be positive")
    return (d * float_bytes) / (L * (index_bytes + float_bytes))


def mean_cosine_fidelity(X, X_hat):
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    num = (X * X_hat).sum(1)
    den = np.linalg.norm(X, axis=1) * np.linalg.norm(X_hat, axis=1)
    cos = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(cos.mean())


class ResidualQuantizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the residual codebook.

    ``fit`` samples a base pool (at most ``base_pool_size`` rows) and builds
    the codebook; ``encode``/``decode`` convert to and from QuantCodes and
    ``transform`` returns the quantize-then-reconstruct embeddings, so the
    quantizer can sit inside a Pipeline.
    """

    def __init__(self, n_layers=3, n_clusters=256, metric="cosine",
                 max_iter=50, base_pool_size=100_000, random_state=0):
        self.n_layers = n_layers
        self.n_clusters = n_clusters
        self.metric = metric
        self.max_iter = max_iter
        self.base_pool_size = base_pool_size
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        seed = np.random.SeedSequence(self.random_state)
        pool_seed, build_seed = seed.spawn(2)
        n_pool = min(self.base_pool_size, X.shape[0])
        if n_pool < X.shape[0]:
            rows = np.sort(np.random.default_rng(pool_seed).choice(X.shape[0], n_pool, replace=False))
            X = X[rows]
        self.codebook_ = build_codebook(X, layers=self.n_layers, k=self.n_clusters,
                                        seed=build_seed, metric=self.metric,
                                        max_iters=self.max_iter)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_codebook(cls, codebook: ResidualCodebook):
        est = cls(n_layers=codebook.n_layers, n_clusters=codebook.n_clusters,
                  metric=codebook.metric)
        est.codebook_ = codebook
        est.n_features_in_ = codebook.dim
        return est

    @property
    def centroids_(self):
        check_is_fitted(self, "codebook_")
        return self.codebook_.centroids

    def encode(self, X):
        check_is_fitted(self, "codebook_")
        return encode(check_array(X, dtype=np.float64), self.codebook_)

    def decode(self, q, n_layers=None):
        check_is_fitted(self, "codebook_")
        return decode(q, self.codebook_, n_layers=n_layers)

    def transform(self, X):
        return self.decode(self.encode(X))

    def score(self, X, y=None):
        """Mean cosine between inputs and their reconstructions."""
        X = check_array(X, dtype=np.float64)
        return mean_cosine_fidelity(X, self.transform(X))
