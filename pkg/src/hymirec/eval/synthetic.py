"""Planted multi-interest data.

Items are noisy copies of G well-separated cluster directions. Each user
holds a few interests, each inside a different cluster. An interest is
either a planted sub-topic of its cluster (``topics_per_cluster > 0``: items
are ``normalize(c_g + topic_strength * t_gj + spread * noise)`` and the
interest is every item of topic ``t_gj``) or a niche of the ``niche_size``
items closest to a random anchor item inside the cluster. The user's
sequence interleaves draws (without replacement) from those item pools,
choosing the pool uniformly at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DataError
from .data import UserSequence

MAX_CENTROID_COS = 0.3
MAX_TRIES = 1000


@dataclass
class SyntheticSpec:
    n_clusters: int = 4
    items_per_cluster: int = 5000
    cluster_spread: float = 1.0
    n_users: int = 2000
    interests_per_user: tuple = (2, 2)
    sequence_length: int = 100
    dim: int = 64
    niche_size: int = 0        # 0 means sequence_length
    topics_per_cluster: int = 0  # 0 selects niche interests
    topic_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.interests_per_user
        if not 1 <= lo <= hi <= self.n_clusters:
            raise ValueError("interests_per_user must satisfy 1 <= min <= max <= n_clusters")
        if self.niche_size <= 0:
            self.niche_size = self.sequence_length
        if self.niche_size > self.items_per_cluster:
            raise ValueError("niche_size exceeds items_per_cluster")
        if self.topics_per_cluster < 0 or self.topics_per_cluster > self.items_per_cluster:
            raise ValueError("topics_per_cluster must lie in [0, items_per_cluster]")

    @classmethod
    def from_config(cls, cfg, seed=None):
        return cls(n_clusters=cfg.syn_clusters, items_per_cluster=cfg.syn_items_per_cluster,
                   cluster_spread=cfg.syn_spread, n_users=cfg.syn_users,
                   interests_per_user=(cfg.syn_interests_min, cfg.syn_interests_max),
                   sequence_length=cfg.syn_seq_len, dim=cfg.syn_dim,
                   niche_size=cfg.syn_niche, topics_per_cluster=cfg.syn_topics,
                   topic_strength=cfg.syn_topic_strength,
                   seed=cfg.seed if seed is None else seed)


@dataclass
class SyntheticData:
    item_ids: np.ndarray
    embeddings: np.ndarray
    sequences: list
    centroids: np.ndarray
    item_cluster: np.ndarray                      # cluster of each item row
    user_clusters: list = field(default_factory=list)
    user_anchors: list = field(default_factory=list)   # anchor directions per user
    interaction_interest: list = field(default_factory=list)
    item_topic: np.ndarray = None                 # topic of each item row (topic mode)

    def labels(self):
        out = {"item_cluster": self.item_cluster.tolist(),
               "user_clusters": [list(map(int, c)) for c in self.user_clusters],
               "interaction_interest": [list(map(int, c)) for c in self.interaction_interest]}
        if self.item_topic is not None:
            out["item_topic"] = self.item_topic.tolist()
        return out


def planted_centroids(n, dim, rng, max_cos=MAX_CENTROID_COS, max_tries=MAX_TRIES):
    """Unit directions with pairwise cosine below ``max_cos`` (by rejection)."""
    accepted = []
    tries = 0
    while len(accepted) < n:
        tries += 1
        if tries > max_tries:
            raise DataError(f"could not place {n} centroids with pairwise cos < {max_cos} "
                            f"in {dim} dims after {max_tries} tries")
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if all(v @ a < max_cos for a in accepted):
            accepted.append(v)
    return np.array(accepted)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    G, npc, d = spec.n_clusters, spec.items_per_cluster, spec.dim
    C = planted_centroids(G, d, rng)
    noise = rng.normal(size=(G * npc, d)) / np.sqrt(d)
    cluster_of_row = np.repeat(np.arange(G), npc)
    X = C[cluster_of_row] + spec.cluster_spread * noise
    n_topics = spec.topics_per_cluster
    topic_of_row = np.zeros(G * npc, dtype=np.int64)
    if n_topics:
        topics = rng.normal(size=(G, n_topics, d))
        topics /= np.linalg.norm(topics, axis=2, keepdims=True)
        topic_of_row = np.tile(np.arange(npc) % n_topics, G)
        X += spec.topic_strength * topics[cluster_of_row, topic_of_row]
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    # ids carry no cluster information
    perm = rng.permutation(G * npc)
    X = X[perm]
    cluster_of_row = cluster_of_row[perm]
    topic_of_row = topic_of_row[perm]
    members = [np.flatnonzero(cluster_of_row == g) for g in range(G)]

    lo, hi = spec.interests_per_user
    sequences, user_clusters, anchors, inter = [], [], [], []
    for u in range(spec.n_users):
        k = int(rng.integers(lo, hi + 1))
        clusters = np.sort(rng.choice(G, size=k, replace=False))
        niches = []
        user_anchor = []
        for g in clusters:
            rows = members[g]
            if n_topics:
                top = rows[topic_of_row[rows] == rng.integers(n_topics)]
            else:
                a = rows[rng.integers(len(rows))]
                sims = X[rows] @ X[a]
                part = np.argpartition(-sims, spec.niche_size - 1)[:spec.niche_size]
                top = rows[part[np.lexsort((part, -sims[part]))]]
            niches.append(list(rng.permutation(top)))
            user_anchor.append(X[top].mean(0))
        seq, which = [], []
        for _ in range(spec.sequence_length):
            open_ = [j for j in range(k) if niches[j]]
            if not open_:
                raise DataError("interest pools exhausted; raise niche_size or lower topics_per_cluster")
            j = open_[int(rng.integers(len(open_)))]
            seq.append(int(niches[j].pop()))
            which.append(int(clusters[j]))
        sequences.append(UserSequence(u, seq))
        user_clusters.append(clusters)
        A = np.array(user_anchor)
        anchors.append(A / np.linalg.norm(A, axis=1, keepdims=True))
        inter.append(which)
    return SyntheticData(item_ids=np.arange(G * npc, dtype=np.int64), embeddings=X,
                         sequences=sequences, centroids=C, item_cluster=cluster_of_row,
                         user_clusters=user_clusters, user_anchors=anchors,
                         interaction_interest=inter,
                         item_topic=topic_of_row if n_topics else None)
