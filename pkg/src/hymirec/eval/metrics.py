from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def recall_at_k(ranked, window, K) -> float:
    """|top-K ∩ window| / |window|."""
    if K < 1:
        raise ValueError("K must be >= 1")
    window = set(int(i) for i in window)
    if not window:
        raise ValueError("empty target window")
    hits = sum(1 for i in list(ranked)[:K] if int(i) in window)
    return hits / len(window)


def ndcg_at_k(ranked, window, K) -> float:
    """Binary-relevance NDCG; the ideal DCG has min(K, |window|) hits."""
    if K < 1:
        raise ValueError("K must be >= 1")
    window = set(int(i) for i in window)
    if not window:
        raise ValueError("empty target window")
    dcg = sum(1.0 / np.log2(r + 2) for r, i in enumerate(list(ranked)[:K]) if int(i) in window)
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(K, len(window))))
    return float(dcg / idcg)


@dataclass
class MetricsReport:
    recall_at: dict
    ndcg_at: dict
    per_user: list = field(default_factory=list, repr=False)
    recall_denominator: str = "window"

    @classmethod
    def from_rankings(cls, rankings, windows, ks, user_ids=None):
        ks = sorted(ks)
        per_user = []
        for u, (ranked, win) in enumerate(zip(rankings, windows)):
            per_user.append({
                "user_id": int(user_ids[u]) if user_ids is not None else u,
                "recall": {k: recall_at_k(ranked, win, k) for k in ks},
                "ndcg": {k: ndcg_at_k(ranked, win, k) for k in ks},
            })
        n = max(1, len(per_user))
        recall = {k: sum(p["recall"][k] for p in per_user) / n for k in ks}
        ndcg = {k: sum(p["ndcg"][k] for p in per_user) / n for k in ks}
        return cls(recall, ndcg, per_user)
