"""Max-over-interests scoring, query-splitting top-K retrieval and the
periodic-refresh serving simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import normalize_rows


class RetrievalIndex:
    """Brute-force cosine index over unit-normalized item vectors."""

    def __init__(self, item_ids, embeddings):
        ids = np.asarray(item_ids, dtype=np.int64)
        E = np.asarray(embeddings, dtype=np.float64)
        if E.ndim != 2 or len(ids) != E.shape[0]:
            raise ValueError("need one embedding row per item id")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("item ids must be unique")
        self.item_ids = ids
        self.embeddings = normalize_rows(E)
        self._row = {int(i): r for r, i in enumerate(ids.tolist())}

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def __len__(self):
        return len(self.item_ids)

    def rows_of(self, ids):
        return np.array([self._row[int(i)] for i in ids], dtype=np.int64)


@dataclass
class InterestSet:
    user_id: int
    interests: np.ndarray       # (s, d), unit rows
    version: int = 0            # interaction count at the last refresh

    def __post_init__(self):
        self.interests = np.atleast_2d(np.asarray(self.interests, dtype=np.float64))


def _interest_matrix(interests):
    R = interests.interests if isinstance(interests, InterestSet) else interests
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if R.shape[0] == 0:
        raise ValueError("empty interest set")
    return normalize_rows(R)


def score(item, interests) -> float:
    """Relevance of one item: the largest cosine over the interests."""
    R = _interest_matrix(interests)
    v = np.asarray(item, dtype=np.float64).ravel()
    if v.shape[0] != R.shape[1]:
        raise ValueError(f"dimension mismatch: {v.shape[0]} != {R.shape[1]}")
    v = normalize_rows(v[None])[0]
    return float(np.max(R @ v))


def _topk_rows(sims, ids, K):
    """Rows of the K best entries, ordered by (-sim, id)."""
    n = len(sims)
    if K >= n:
        cand = np.arange(n)
    else:
        kth = np.partition(sims, n - K)[n - K]
        cand = np.flatnonzero(sims >= kth)
    order = np.lexsort((ids[cand], -sims[cand]))
    return cand[order[:K]]


def retrieve_topk(index: RetrievalIndex, interests, K, exclude=None, return_candidates=False):
    """Query-splitting retrieval.

    Each interest retrieves its own top K, the union is de-duplicated,
    re-scored by the max-over-interests rule and cut to K (ties by lower
    item id). ``exclude`` lists item ids that may not be returned.
    Returns a list of (item_id, score).
    """
    if K <= 0:
        raise ValueError("K must be positive")
    if K > len(index):
        raise ValueError(f"K={K} exceeds index size {len(index)}")
    R = _interest_matrix(interests)
    if R.shape[1] != index.dim:
        raise ValueError(f"dimension mismatch: {R.shape[1]} != {index.dim}")
    S = index.embeddings @ R.T                  # (N, s)
    ids = index.item_ids
    if exclude is not None and len(exclude):
        S = S.copy()
        S[np.isin(ids, np.asarray(list(exclude), dtype=np.int64))] = -np.inf
    cand = np.unique(np.concatenate([_topk_rows(S[:, j], ids, K) for j in range(S.shape[1])]))
    cand = cand[np.isfinite(S[cand, 0])]
    best = S[cand].max(1)
    order = np.lexsort((ids[cand], -best))[:K]
    out = [(int(ids[cand[o]]), float(best[o])) for o in order]
    if return_candidates:
        return out, len(cand)
    return out


def full_scan_topk(index: RetrievalIndex, interests, K, exclude=None):
    """Score every item by the max-over-interests rule and take the top K."""
    R = _interest_matrix(interests)
    best = (index.embeddings @ R.T).max(1)
    ids = index.item_ids
    if exclude is not None and len(exclude):
        best = np.where(np.isin(ids, np.asarray(list(exclude), dtype=np.int64)), -np.inf, best)
    order = np.lexsort((ids, -best))[:K]
    return [(int(ids[o]), float(best[o])) for o in order if np.isfinite(best[o])]


def serve_session(events, infer, index: RetrievalIndex, refresh_period=10, K=50,
                  user_id=0, history=()):
    """Replay a user's interaction stream.

    ``infer(item_ids) -> (s, d)`` maps the interaction history to interest
    vectors. Interests are recomputed at the first event and then whenever
    ``refresh_period`` interactions have accumulated since the last
    refresh; in between, the stale set is used. Recommendations never
    include items the user has already interacted with.
    Returns a list of {"event_index", "version", "items"} records.
    """
    if refresh_period < 1:
        raise ValueError("refresh_period must be >= 1")
    seen = list(history)
    seen_set = set(int(i) for i in seen)
    current = None
    log = []
    for t, item in enumerate(events):
        seen.append(int(item))
        seen_set.add(int(item))
        if current is None or len(seen) - current.version >= refresh_period:
            current = InterestSet(user_id, infer(list(seen)), version=len(seen))
        k = min(K, len(index) - len(seen_set & set(index._row)))
        recs = retrieve_topk(index, current, k, exclude=seen_set) if k > 0 else []
        log.append({"event_index": t, "version": current.version,
                    "items": [{"id": i, "score": s} for i, s in recs]})
    return log
