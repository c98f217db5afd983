"""Disentangled multi-interest learning objective.

Window targets are clustered into at most ``s`` groups, the group
centroids are matched one-to-one to the refined interests by maximum
cosine assignment, and a contrastive loss is applied only along matched
(target, interest) pairs. The ablation objectives used for comparison
live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError
from .numerics import cosine_matrix, hungarian_max, spherical_kmeans

VARIANT_KINDS = ("dmil", "no_dmil", "no_window", "max_matching")


@dataclass
class WindowTargets:
    embeddings: np.ndarray      # (n_targets, d), time ordered
    ids: np.ndarray             # (n_targets,)

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        self.ids = np.asarray(self.ids)
        if len(self.embeddings) < 1:
            raise ValueError("a window needs at least one target")
        if len(self.ids) != len(self.embeddings):
            raise ValueError("ids and embeddings disagree in length")

    def __len__(self):
        return len(self.ids)

    def head(self, n):
        return WindowTargets(self.embeddings[:n], self.ids[:n])


@dataclass
class MatchResult:
    groups: np.ndarray          # group id for each target
    centroids: np.ndarray       # (g, d)
    permutation: np.ndarray     # query index matched to each group

    def query_of_target(self):
        return self.permutation[self.groups]


@dataclass
class LossReport:
    total: float
    per_query: np.ndarray
    per_query_grad_mass: np.ndarray
    grad: np.ndarray = field(repr=False)        # dL/dR, shape (s, d)
    matched_groups: list = field(default_factory=list)

    def to_record(self):
        return {"total": float(self.total),
                "per_query": [float(x) for x in self.per_query],
                "per_query_grad_mass": [float(x) for x in self.per_query_grad_mass],
                "matched_groups": self.matched_groups}


def cluster_and_match(targets: WindowTargets, R, seed=0) -> MatchResult:
    """Group the window targets and match groups to interests.

    The group count is min(s, number of distinct targets). The matching is
    a plain function of its inputs; callers treat it as a constant.
    """
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    T = targets.embeddings
    n_distinct = len({row.tobytes() for row in T})
    g = min(R.shape[0], n_distinct)
    C, groups = spherical_kmeans(T, g, seed=seed)
    col_of_query = hungarian_max(cosine_matrix(R, C))
    perm = np.empty(g, dtype=np.int64)
    for q, col in enumerate(col_of_query):
        if col >= 0:
            perm[col] = q
    return MatchResult(groups=groups, centroids=C, permutation=perm)


def _cos_and_grad(A, r):
    """cos(a_i, r) for rows of A and d cos / d r for each row."""
    an = np.linalg.norm(A, axis=1)
    rn = np.linalg.norm(r)
    cos = (A @ r) / (an * rn)
    grad = A / (an[:, None] * rn) - cos[:, None] * r[None, :] / rn ** 2
    return cos, grad


def _ctr_terms(T, r, negatives, tau):
    """Contrastive loss of each positive row of T against interest r.

    Returns (losses (n,), dL_sum/dr (d,)). Negatives are shared.
    """
    pos, dpos = _cos_and_grad(T, r)
    neg, dneg = _cos_and_grad(negatives, r)
    logits = np.concatenate([pos[:, None] / tau,
                             np.broadcast_to(neg / tau, (len(pos), len(neg)))], axis=1)
    mx = logits.max(1, keepdims=True)
    ex = np.exp(logits - mx)
    z = ex.sum(1, keepdims=True)
    losses = (np.log(z[:, 0]) + mx[:, 0]) - logits[:, 0]
    soft = ex / z
    coef_pos = (soft[:, 0] - 1.0) / tau
    coef_neg = soft[:, 1:].sum(0) / tau
    grad = coef_pos @ dpos + coef_neg @ dneg
    return losses, grad


def contrastive_loss(t, r, negatives, tau=0.1, return_grad=False):
    """-log softmax of cos(t, r)/tau against cos(r, e_i)/tau over negatives."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    t = np.asarray(t, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    N = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if N.shape[0] < 1:
        raise ValueError("at least one negative is required")
    losses, grad = _ctr_terms(t[None, :], r, N, tau)
    if return_grad:
        return float(losses[0]), grad
    return float(losses[0])


def _report(R, assignment, T, negatives, tau, norm, groups=None):
    """Loss for an explicit target -> query assignment (-1 = unassigned)."""
    s, d = R.shape
    per_query = np.zeros(s)
    grad = np.zeros((s, d))
    for j in range(s):
        rows = np.flatnonzero(assignment == j)
        if rows.size == 0:
            continue
        losses, g = _ctr_terms(T[rows], R[j], negatives, tau)
        per_query[j] = losses.sum() / norm
        grad[j] = g / norm
    mass = np.linalg.norm(grad, axis=1)
    matched = [] if groups is None else groups
    return LossReport(total=float(per_query.sum()), per_query=per_query,
                      per_query_grad_mass=mass, grad=grad, matched_groups=matched)


def dmil_loss(targets: WindowTargets, R, match: MatchResult, negatives, tau=0.1,
              window=None) -> LossReport:
    """Matched contrastive loss, normalized by ``window`` (default: number of
    targets). Unmatched interests get exactly zero loss and gradient."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    norm = len(targets) if window is None else window
    assignment = match.query_of_target()
    groups = [[int(match.permutation[g]), [int(i) for i in np.flatnonzero(match.groups == g)]]
              for g in range(len(match.permutation))]
    return _report(R, assignment, targets.embeddings, negatives, tau, norm, groups)


def _most_similar_query(T, R):
    return np.argmax(cosine_matrix(T, R), axis=1)


def ablation_variant(kind, targets: WindowTargets, R, negatives, tau=0.1, window=None,
                     seed=0) -> LossReport:
    """Objective for one training variant.

    dmil          -- window targets, cluster + one-to-one matching
    no_dmil       -- first interest only, next item only
    no_window     -- next item only, sent to its most similar interest
    max_matching  -- every window target sent to its most similar interest
    """
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if kind == "dmil":
        match = cluster_and_match(targets, R, seed=seed)
        return dmil_loss(targets, R, match, negatives, tau, window)
    if kind == "no_dmil":
        assignment = np.array([0])
        return _report(R, assignment, targets.embeddings[:1], negatives, tau, 1.0)
    if kind == "no_window":
        T = targets.embeddings[:1]
        return _report(R, _most_similar_query(T, R), T, negatives, tau, 1.0)
    if kind == "max_matching":
        norm = len(targets) if window is None else window
        T = targets.embeddings
        return _report(R, _most_similar_query(T, R), T, negatives, tau, norm)
    raise ValueError(f"unknown variant {kind!r}; expected one of {VARIANT_KINDS}")


def sample_negatives(rng, n_items, m, exclude=()):
    """Draw ``m`` distinct item rows uniformly from range(n_items) minus
    ``exclude``."""
    exclude = np.unique(np.asarray(exclude, dtype=np.int64))
    exclude = exclude[(exclude >= 0) & (exclude < n_items)]
    if n_items - len(exclude) < m:
        raise DataError(f"only {n_items - len(exclude)} negatives available, need {m}")
    if n_items - len(exclude) < 4 * m:
        pool = np.setdiff1d(np.arange(n_items), exclude)
        return rng.choice(pool, size=m, replace=False)
    out = []
    seen = set(exclude.tolist())
    while len(out) < m:
        for x in rng.integers(0, n_items, size=2 * m).tolist():
            if x not in seen:
                seen.add(x)
                out.append(x)
                if len(out) == m:
                    break
    return np.asarray(out, dtype=np.int64)
