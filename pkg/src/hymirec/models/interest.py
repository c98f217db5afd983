"""Hybrid coarse-to-fine interest model.

A light bidirectional encoder reads the (reconstructed) long history
followed by ``n_coarse`` learnable queries and emits coarse interest
vectors. A causal encoder then reads ``[coarse + indicator, last-n items,
refined queries]`` and the outputs at the refined-query positions,
projected to item space and L2-normalized, are the user's interests.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import Encoder

# named parameter groups, for tests and for masking frozen parameters
QUERY_PARAMS = ("q_coarse", "q_refined", "indicator")


@dataclass
class ModelConfig:
    dim: int = 64
    d_model: int = 64
    n_heads: int = 4
    layers_light: int = 2
    layers_refined: int = 4
    d_ff: int = 256
    n_interests: int = 3
    n_coarse: int = 0          # 0 means "same as n_interests"
    n_last: int = 30
    l_max: int = 300
    use_light: bool = True
    use_indicator: bool = True

    def __post_init__(self):
        if self.n_coarse <= 0:
            self.n_coarse = self.n_interests
        if self.n_interests < 1:
            raise ValueError("n_interests must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def to_dict(self):
        return asdict(self)


def pad_left(seqs, dim, width=None):
    """Stack variable-length (len_i, dim) arrays, left-padded with zeros.

    Returns (array (B, width, dim), valid mask (B, width)).
    """
    lens = [len(s) for s in seqs]
    width = max(lens, default=0) if width is None else width
    out = np.zeros((len(seqs), width, dim))
    valid = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        if lens[i]:
            out[i, width - lens[i]:] = s
            valid[i, width - lens[i]:] = True
    return out, valid


def _recency_ids(width):
    # most recent item (rightmost) gets id 0
    return np.arange(width)[::-1]


class InterestModel:
    """Parameters plus forward/backward of the hybrid interest model.

    ``forward`` caches activations; ``backward`` consumes them and returns
    exact gradients for every parameter.
    """

    def __init__(self, config: ModelConfig, seed=0, params=None):
        self.config = config
        c = config
        self.light = Encoder("light", c.layers_light, c.n_heads, causal=False)
        self.refined = Encoder("ref", c.layers_refined, c.n_heads, causal=True)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = params
        self._cache = None

    def _init_params(self, rng):
        c = self.config
        p = {}

        def dense(name, fan_in, fan_out):
            p[name + ".W"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))
            p[name + ".b"] = np.zeros(fan_out)

        if c.use_light:
            dense("light.in", c.dim, c.d_model)
            p["light.pos"] = rng.normal(0.0, 0.02, (c.l_max + c.n_coarse, c.d_model))
            p["q_coarse"] = rng.normal(0.0, 0.02, (c.n_coarse, c.d_model))
            self.light.init(p, c.d_model, c.d_ff, rng)
            dense("light.out", c.d_model, c.dim)
            if c.use_indicator:
                p["indicator"] = np.zeros(c.dim)
        dense("ref.in", c.dim, c.d_model)
        p["ref.pos"] = rng.normal(0.0, 0.02, (c.n_coarse + c.n_last + c.n_interests, c.d_model))
        p["q_refined"] = rng.normal(0.0, 0.02, (c.n_interests, c.d_model))
        self.refined.init(p, c.d_model, c.d_ff, rng)
        dense("ref.out", c.d_model, c.dim)
        return p

    @property
    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    # ------------------------------------------------------------------
    def _check_seq(self, x, valid, max_len, what):
        if x.ndim != 3 or x.shape[2] != self.config.dim:
            raise ValueError(f"{what} must have shape (B, T, {self.config.dim}), got {x.shape}")
        if x.shape[1] > max_len:
            raise ValueError(f"{what} length {x.shape[1]} exceeds {max_len}")
        if valid.shape != x.shape[:2]:
            raise ValueError(f"{what} mask shape {valid.shape} != {x.shape[:2]}")

    def _coarse(self, history, valid):
        c, p = self.config, self.params
        self._check_seq(history, valid, c.l_max, "history")
        B, Lh, _ = history.shape
        xh = history @ p["light.in.W"] + p["light.in.b"]
        q = np.broadcast_to(p["q_coarse"], (B, c.n_coarse, c.d_model))
        ids = np.concatenate([_recency_ids(Lh), c.l_max + np.arange(c.n_coarse)])
        x = np.concatenate([xh, q], axis=1) + p["light.pos"][ids]
        v = np.concatenate([valid, np.ones((B, c.n_coarse), dtype=bool)], axis=1)
        y, enc_cache = self.light.forward(x, p, v)
        yq = y[:, Lh:]
        R = yq @ p["light.out.W"] + p["light.out.b"]
        return R, (history, ids, Lh, enc_cache, yq)

    def _coarse_bwd(self, dR, cache, grads):
        c, p = self.config, self.params
        history, ids, Lh, enc_cache, yq = cache
        B = dR.shape[0]
        grads["light.out.W"] += yq.reshape(-1, c.d_model).T @ dR.reshape(-1, c.dim)
        grads["light.out.b"] += dR.reshape(-1, c.dim).sum(0)
        dy = np.zeros((B, Lh + c.n_coarse, c.d_model))
        dy[:, Lh:] = dR @ p["light.out.W"].T
        dx = self.light.backward(dy, enc_cache, p, grads)
        grads["light.pos"][ids] += dx.sum(0)
        grads["q_coarse"] += dx[:, Lh:].sum(0)
        dxh = dx[:, :Lh]
        grads["light.in.W"] += history.reshape(-1, c.dim).T @ dxh.reshape(-1, c.d_model)
        grads["light.in.b"] += dxh.reshape(-1, c.d_model).sum(0)

    def _refined(self, R_coarse, last_n, valid):
        c, p = self.config, self.params
        self._check_seq(last_n, valid, c.n_last, "last_n")
        B, Ln, _ = last_n.shape
        s = c.n_interests
        parts, vparts, idparts = [], [], []
        if c.use_light:
            if R_coarse is None or R_coarse.shape[1:] != (c.n_coarse, c.dim):
                raise ValueError(f"R_coarse must have shape (B, {c.n_coarse}, {c.dim})")
            marked = R_coarse + p["indicator"] if c.use_indicator else R_coarse
            parts.append(marked)
            vparts.append(np.ones((B, c.n_coarse), dtype=bool))
            idparts.append(np.arange(c.n_coarse))
        parts.append(last_n)
        vparts.append(valid)
        idparts.append(c.n_coarse + _recency_ids(Ln))
        items = np.concatenate(parts, axis=1)
        xi = items @ p["ref.in.W"] + p["ref.in.b"]
        q = np.broadcast_to(p["q_refined"], (B, s, c.d_model))
        ids = np.concatenate(idparts + [c.n_coarse + c.n_last + np.arange(s)])
        x = np.concatenate([xi, q], axis=1) + p["ref.pos"][ids]
        v = np.concatenate(vparts + [np.ones((B, s), dtype=bool)], axis=1)
        y, enc_cache = self.refined.forward(x, p, v)
        T_items = items.shape[1]
        yq = y[:, T_items:]
        z = yq @ p["ref.out.W"] + p["ref.out.b"]
        zn = np.linalg.norm(z, axis=-1, keepdims=True)
        R = z / zn
        return R, (items, ids, T_items, enc_cache, yq, R, zn)

    def _refined_bwd(self, dR, cache, grads):
        c, p = self.config, self.params
        items, ids, T_items, enc_cache, yq, R, zn = cache
        B = dR.shape[0]
        dz = (dR - R * (dR * R).sum(-1, keepdims=True)) / zn
        grads["ref.out.W"] += yq.reshape(-1, c.d_model).T @ dz.reshape(-1, c.dim)
        grads["ref.out.b"] += dz.reshape(-1, c.dim).sum(0)
        dy = np.zeros((B, T_items + c.n_interests, c.d_model))
        dy[:, T_items:] = dz @ p["ref.out.W"].T
        dx = self.refined.backward(dy, enc_cache, p, grads)
        grads["ref.pos"][ids] += dx.sum(0)
        grads["q_refined"] += dx[:, T_items:].sum(0)
        dxi = dx[:, :T_items]
        grads["ref.in.W"] += items.reshape(-1, c.dim).T @ dxi.reshape(-1, c.d_model)
        grads["ref.in.b"] += dxi.reshape(-1, c.d_model).sum(0)
        if c.use_light:
            ditems = dxi @ p["ref.in.W"].T
            dRc = ditems[:, :c.n_coarse]
            if c.use_indicator:
                grads["indicator"] += dRc.reshape(-1, c.dim).sum(0)
            return dRc
        return None

    # ------------------------------------------------------------------
    def coarse_forward(self, history, valid=None):
        """Coarse interests (B, n_coarse, dim) from a left-padded history."""
        history = np.asarray(history, dtype=np.float64)
        if valid is None:
            valid = np.ones(history.shape[:2], dtype=bool)
        return self._coarse(history, np.asarray(valid, dtype=bool))[0]

    def refined_forward(self, R_coarse, last_n, valid=None):
        """Unit-norm refined interests (B, n_interests, dim)."""
        last_n = np.asarray(last_n, dtype=np.float64)
        if valid is None:
            valid = np.ones(last_n.shape[:2], dtype=bool)
        return self._refined(R_coarse, last_n, np.asarray(valid, dtype=bool))[0]

    def forward(self, history, history_valid, last_n, last_n_valid, cache=True):
        """Full coarse-to-fine pass; caches activations for ``backward``."""
        c = self.config
        history = np.asarray(history, dtype=np.float64)
        last_n = np.asarray(last_n, dtype=np.float64)
        if c.use_light:
            Rc, cc = self._coarse(history, np.asarray(history_valid, dtype=bool))
        else:
            Rc, cc = None, None
        R, rc = self._refined(Rc, last_n, np.asarray(last_n_valid, dtype=bool))
        self._cache = (cc, rc) if cache else None
        return R

    def backward(self, dR):
        """Gradients of a scalar loss w.r.t. every parameter, given dL/dR."""
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward pass")
        cc, rc = self._cache
        self._cache = None
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dRc = self._refined_bwd(np.asarray(dR, dtype=np.float64), rc, grads)
        if dRc is not None:
            self._coarse_bwd(dRc, cc, grads)
        return grads

    def copy(self):
        return InterestModel(self.config, params={k: v.copy() for k, v in self.params.items()})
