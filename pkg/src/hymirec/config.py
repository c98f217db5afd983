"""Flat ``key = value`` run configuration and named random streams."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .exceptions import ConfigError

VARIANTS = ("full", "no_light", "no_csrc", "euclid_csrc", "no_indicator",
            "no_dmil", "no_window", "max_matching")


@dataclass
class RunConfig:
    # codebook
    cb_layers: int = 3
    cb_k: int = 256
    cb_pool: int = 100_000
    cb_metric: str = "cosine"
    kmeans_iters: int = 50
    # model
    d_model: int = 64
    heads: int = 4
    layers_light: int = 2
    layers_refined: int = 4
    d_ff: int = 256
    s: int = 3
    s_c: int = 0
    n_last: int = 30
    l_max: int = 300
    # training
    variant: str = "full"
    lr: float = 1e-3
    warmup_ratio: float = 0.1
    batch: int = 16
    steps: int = 1000
    m: int = 8
    tau: float = 0.1
    w: int = 8
    loss_norm: str = "window"
    negatives: str = "universe"
    clip_norm: float = 1.0
    seed: int = 2020
    # retrieval / evaluation
    K: int = 50
    eval_ks: str = "10,50,100,200"
    refresh_period: int = 10
    # synthetic data
    syn_clusters: int = 4
    syn_items_per_cluster: int = 5000
    syn_spread: float = 1.0
    syn_users: int = 2000
    syn_interests_min: int = 2
    syn_interests_max: int = 2
    syn_seq_len: int = 100
    syn_dim: int = 64
    syn_niche: int = 0
    syn_topics: int = 50
    syn_topic_strength: float = 1.0
    # runtime
    threads: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.cb_metric not in ("cosine", "euclidean"):
            raise ConfigError("cb_metric must be 'cosine' or 'euclidean'")
        if self.loss_norm not in ("window", "targets"):
            raise ConfigError("loss_norm must be 'window' or 'targets'")
        if self.negatives not in ("universe", "in_batch"):
            raise ConfigError("negatives must be 'universe' or 'in_batch'")
        positive = ("cb_layers", "cb_k", "cb_pool", "d_model", "heads", "s", "n_last",
                    "l_max", "batch", "steps", "m", "w", "K", "refresh_period")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.tau <= 0 or self.lr <= 0:
            raise ConfigError("tau and lr must be positive")
        if self.d_model % self.heads:
            raise ConfigError("d_model must be divisible by heads")
        self.ks
        return self

    @property
    def ks(self):
        try:
            ks = sorted({int(x) for x in str(self.eval_ks).split(",") if x.strip()})
        except ValueError as exc:
            raise ConfigError(f"eval_ks must be comma-separated integers: {exc}") from exc
        if not ks or ks[0] < 1:
            raise ConfigError("eval_ks needs positive integers")
        return ks

    # -- parsing -----------------------------------------------------------
    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def replace(self, **kw):
        return self.with_overrides({k: str(v) for k, v in kw.items()})

    def with_overrides(self, overrides: dict):
        types = {f.name: f.type for f in fields(self)}
        values = dataclasses.asdict(self)
        for key, raw in overrides.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, types[key])
        return RunConfig(**values)

    @classmethod
    def from_file(cls, path, overrides=None):
        cfg = cls().with_overrides(parse_kv_lines(open(path).read().splitlines(), str(path)))
        return cfg.with_overrides(overrides or {})

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        raw = str(raw)
    name = typ if isinstance(typ, str) else typ.__name__
    try:
        if name == "int":
            return int(raw)
        if name == "float":
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_kv_lines(lines, source="<config>"):
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def stream(seed, name, *extra):
    """Independent RNG for a named component (codebook, model, negatives,
    synthetic, ...), optionally further keyed by integers such as a step."""
    tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    return np.random.default_rng([int(seed), tag, *[int(x) for x in extra]])


def stream_seed(seed, name, *extra):
    return int(stream(seed, name, *extra).integers(2 ** 31))
