"""Shared numerical kernels: cosine similarity, cosine-metric k-means
(balanced and unconstrained) and maximum-weight assignment."""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateVectorError


def _as_matrix(points, name="points"):
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors.

    Raises DegenerateVectorError when either vector has zero norm, rather
    than silently returning 0.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} != {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def normalize_rows(X, eps=0.0):
    """Scale each row to unit L2 norm. Rows with norm <= eps raise."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise DegenerateVectorError("cannot normalize a zero-norm row")
    return X / norms


def cosine_matrix(A, B):
    """Pairwise cosine similarities between rows of A and rows of B.

    Zero-norm rows of B (e.g. a collapsed centroid) get similarity 0 rather
    than NaN; zero-norm rows of A raise.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    An = normalize_rows(A)
    bn = np.linalg.norm(B, axis=1)
    safe = np.where(bn > 0, bn, 1.0)
    S = An @ (B / safe[:, None]).T
    return np.clip(S, -1.0, 1.0)


# --------------------------------------------------------------------------
# k-means
# --------------------------------------------------------------------------

def _cosine_sims(X, C):
    return cosine_matrix(X, C)


def _neg_sq_dists(X, C):
    d2 = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return -np.maximum(d2, 0.0)


_SIMILARITIES = {"cosine": _cosine_sims, "euclidean": _neg_sq_dists}


def _plusplus_seed(X, k, rng, metric):
    """k-means++ seeding. Under the cosine metric the distance is 1 - cos."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    if metric == "cosine":
        Xn = normalize_rows(X)
        dist = 1.0 - Xn @ Xn[chosen[0]]
    else:
        dist = ((X - X[chosen[0]]) ** 2).sum(1)
    dist = np.maximum(dist, 0.0)
    for _ in range(1, k):
        w = dist ** 2 if metric == "cosine" else dist
        total = w.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=w / total))
        else:
            # all remaining points coincide with a chosen center
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(free[0])
        chosen.append(nxt)
        if metric == "cosine":
            d_new = 1.0 - Xn @ Xn[nxt]
        else:
            d_new = ((X - X[nxt]) ** 2).sum(1)
        dist = np.minimum(dist, np.maximum(d_new, 0.0))
    return X[chosen].copy()


def _cluster_means(X, assign, k, fallback):
    C = np.array(fallback, dtype=np.float64, copy=True)
    counts = np.bincount(assign, minlength=k)
    sums = np.zeros_like(C)
    np.add.at(sums, assign, X)
    nz = counts > 0
    C[nz] = sums[nz] / counts[nz, None]
    return C


def _objective(S, assign):
    return float(S[np.arange(S.shape[0]), assign].sum())


def _greedy_balanced_assign(S):
    """Capacity-constrained greedy assignment.

    Points are visited by decreasing margin (best minus second-best
    similarity) and take their most similar centroid that still has room.
    Exactly N % k clusters receive ceil(N/k) points, the rest floor(N/k).
    """
    n, k = S.shape
    q, r = divmod(n, k)
    if k > 1:
        top2 = -np.partition(-S, 1, axis=1)[:, :2]
        margin = top2[:, 0] - top2[:, 1]
    else:
        margin = np.zeros(n)
    # stable sort on (-margin, index) keeps ties in index order
    order = np.argsort(-margin, kind="stable")
    prefs = np.argsort(-S, axis=1, kind="stable")
    size = np.zeros(k, dtype=np.int64)
    big_left = r
    assign = np.empty(n, dtype=np.int64)
    for i in order:
        for c in prefs[i]:
            s = size[c]
            if s < q or (s == q and big_left > 0):
                assign[i] = c
                size[c] = s + 1
                if s == q:
                    big_left -= 1
                break
    return assign


def balanced_kmeans(points, k, max_iters=50, seed=0, metric="cosine",
                    return_history=False):
    """Balanced k-means under the cosine (default) or Euclidean metric.

    Returns (centroids, assignment). Every cluster holds floor(N/k) or
    ceil(N/k) points and every centroid is the arithmetic mean of its
    points (not renormalized). An iteration is only kept when it does not
    lower the objective, so the objective history is non-decreasing.
    """
    X = _as_matrix(points)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"balanced k-means needs at least k={k} points, got {n}")
    if metric not in _SIMILARITIES:
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "cosine" and np.any(np.linalg.norm(X, axis=1) == 0):
        raise DegenerateVectorError("zero-norm point in cosine k-means")
    sim = _SIMILARITIES[metric]
    rng = np.random.default_rng(seed)

    C = _plusplus_seed(X, k, rng, metric)
    assign = _greedy_balanced_assign(sim(X, C))
    C = _cluster_means(X, assign, k, C)
    obj = _objective(sim(X, C), assign)
    history = [obj]
    for _ in range(max_iters):
        S = sim(X, C)
        new = _greedy_balanced_assign(S)
        if np.array_equal(new, assign) or _objective(S, new) <= _objective(S, assign):
            break
        C_new = _cluster_means(X, new, k, C)
        obj_new = _objective(sim(X, C_new), new)
        if obj_new < obj:
            break
        assign, C, obj = new, C_new, obj_new
        history.append(obj)
    if return_history:
        return C, assign, history
    return C, assign


def balanced_kmeans_cosine(points, k, max_iters=50, seed=0, return_history=False):
    return balanced_kmeans(points, k, max_iters=max_iters, seed=seed,
                           metric="cosine", return_history=return_history)


def spherical_kmeans(points, k, max_iters=50, seed=0):
    """Unconstrained cosine k-means.

    The effective cluster count is min(k, len(points)). Centroids are unit
    mean directions. A cluster left empty by the assignment step is
    reseeded with the point least similar to its own centroid (taken from
    a cluster that can spare it), so every returned cluster is non-empty.
    """
    X = _as_matrix(points)
    n = X.shape[0]
    if n < 1:
        raise ValueError("spherical k-means needs at least one point")
    if k < 1:
        raise ValueError("k must be >= 1")
    Xn = normalize_rows(X)
    k = min(k, n)
    rng = np.random.default_rng(seed)
    C = normalize_rows(_plusplus_seed(Xn, k, rng, "cosine"))

    assign = None
    for _ in range(max(1, max_iters)):
        S = Xn @ C.T
        new = np.argmax(S, axis=1)
        new = _fill_empty(S, new, k)
        C = _mean_directions(Xn, new, k, C)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
    return C, assign


def _fill_empty(S, assign, k):
    assign = assign.copy()
    own = S[np.arange(S.shape[0]), assign]
    for c in range(k):
        counts = np.bincount(assign, minlength=k)
        if counts[c] > 0:
            continue
        movable = counts[assign] > 1
        cand = np.flatnonzero(movable)
        j = cand[np.argmin(own[cand])]
        assign[j] = c
        own[j] = np.inf
    return assign


def _mean_directions(Xn, assign, k, fallback):
    C = _cluster_means(Xn, assign, k, fallback)
    norms = np.linalg.norm(C, axis=1)
    # antipodal members can cancel; keep the previous direction then
    bad = norms <= 1e-12
    C[bad] = fallback[bad]
    norms[bad] = np.linalg.norm(C[bad], axis=1)
    return C / norms[:, None]


# --------------------------------------------------------------------------
# assignment
# --------------------------------------------------------------------------

def _min_cost_assignment(cost):
    """Shortest augmenting path Hungarian method for n_rows <= n_cols.

    Returns col index for each row.
    """
    n, m = cost.shape
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)   # p[j]: row matched to column j (1-based)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian_max(sim):
    """Assignment maximizing the summed similarity.

    ``sim`` has one row per interest query and one column per group. The
    result has one entry per row: the matched column, or -1 for rows left
    unmatched when there are fewer columns than rows. For square input the
    result is a permutation.
    """
    S = np.asarray(sim, dtype=np.float64)
    if S.ndim != 2 or S.size == 0:
        raise ValueError("hungarian_max needs a non-empty 2-D matrix")
    if not np.all(np.isfinite(S)):
        raise ValueError("similarity matrix contains non-finite values")
    rows, cols = S.shape
    if cols <= rows:
        col_row = _min_cost_assignment(-S.T)   # each column gets a distinct row
        out = np.full(rows, -1, dtype=np.int64)
        out[col_row] = np.arange(cols)
        return out
    return _min_cost_assignment(-S)
