"""Zero-shot cluster-to-label projection and clustering evaluation.

The zero-shot prediction pipeline is: event features -> k-means into N
clusters -> optimal cluster/label assignment (Hungarian, maximizing
contingency overlap) -> micro F1 on the relabeled predictions.  The
chance-corrected clustering scores (AMI, ARI, ...) are computed on the raw
cluster ids and do not depend on the assignment step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn import metrics as _skm

from .errors import ContractError

METRIC_KEYS = ("f1", "ami", "fm", "rand", "ari", "nmi", "homogeneity")


@dataclass(frozen=True)
class ClusteringResult:
    cluster_ids: np.ndarray
    centroids: np.ndarray
    inertia: float


def kmeans(features: np.ndarray, n_clusters: int, seed: int = 0) -> ClusteringResult:
    """Plain Lloyd k-means with k-means++ seeding, deterministic per seed.

    Converges when assignments stabilize, the max centroid shift drops below
    1e-6, or after 300 iterations.  A cluster that empties is re-seeded with
    the point currently farthest from its assigned centroid.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"features must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if n < n_clusters:
        raise ContractError(f"cannot form {n_clusters} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(X, n_clusters, rng)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(300):
        d2 = _sq_dists(X, centroids)
        new_assign = np.argmin(d2, axis=1)
        for c in range(n_clusters):
            if not np.any(new_assign == c):
                far = int(np.argmax(d2[np.arange(n), new_assign]))
                new_assign[far] = c
                centroids[c] = X[far]
                d2 = _sq_dists(X, centroids)
        shift = 0.0
        for c in range(n_clusters):
            members = X[new_assign == c]
            new_centroid = members.mean(axis=0)
            shift = max(shift, float(np.linalg.norm(new_centroid - centroids[c])))
            centroids[c] = new_centroid
        if np.array_equal(new_assign, assign) or shift < 1e-6:
            assign = new_assign
            break
        assign = new_assign
    inertia = float(_sq_dists(X, centroids)[np.arange(n), assign].sum())
    return ClusteringResult(cluster_ids=assign, centroids=centroids, inertia=inertia)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(0, n))]
    for _ in range(1, k):
        d2 = _sq_dists(X, X[centers]).min(axis=1)
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen center
            choices = [i for i in range(n) if i not in centers]
            centers.append(int(rng.choice(choices)) if choices else centers[-1])
            continue
        centers.append(int(rng.choice(n, p=d2 / total)))
    return X[centers].astype(np.float64).copy()


# --------------------------------------------------------------------------
# Optimal assignment
# --------------------------------------------------------------------------

def hungarian(cost: np.ndarray, sense: str = "min") -> tuple[tuple[int, ...], float]:
    """Optimal assignment on a square cost matrix.

    Returns ``(assignment, objective)`` where ``assignment[row] = column``.
    Among equally optimal assignments the lexicographically smallest
    permutation is returned, so results are reproducible regardless of the
    search order.  ``sense="max"`` maximizes instead of minimizing.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ContractError(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ContractError("cost matrix contains non-finite entries")
    if sense not in ("min", "max"):
        raise ContractError(f"sense must be 'min' or 'max', got {sense!r}")
    M = C if sense == "min" else -C
    best = _assignment_value(M)
    perm = _lex_smallest_optimal(M, best)
    objective = float(sum(C[i, perm[i]] for i in range(len(perm))))
    return tuple(perm), objective


def _assignment_value(M: np.ndarray) -> float:
    return float(sum(M[i, j] for i, j in enumerate(_solve_min(M))))


def _solve_min(M: np.ndarray) -> list[int]:
    """O(n^3) shortest-augmenting-path assignment (potentials form)."""
    n = M.shape[0]
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = row matched to column j (1-based)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = M[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = [0] * n
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


def _lex_smallest_optimal(M: np.ndarray, best: float) -> list[int]:
    """Fix rows in order, each to the smallest column that still permits an
    optimal completion."""
    n = M.shape[0]
    tol = 1e-9 * max(1.0, abs(best))
    cols_left = list(range(n))
    perm: list[int] = []
    prefix = 0.0
    for i in range(n):
        for c in cols_left:
            rest_rows = list(range(i + 1, n))
            rest_cols = [x for x in cols_left if x != c]
            sub_val = _assignment_value(M[np.ix_(rest_rows, rest_cols)]) if rest_rows else 0.0
            if prefix + M[i, c] + sub_val <= best + tol:
                perm.append(c)
                prefix += M[i, c]
                cols_left.remove(c)
                break
        else:  # numerical safety net: accept the cheapest remaining column
            c = min(cols_left, key=lambda x: M[i, x])
            perm.append(c)
            prefix += M[i, c]
            cols_left.remove(c)
    return perm


def contingency_matrix(cluster_ids: np.ndarray, gold_labels: np.ndarray, n: int) -> np.ndarray:
    table = np.zeros((n, n), dtype=np.int64)
    for c, g in zip(cluster_ids, gold_labels):
        table[int(c), int(g)] += 1
    return table


def assign_clusters_to_labels(
    cluster_ids: np.ndarray, gold_labels: np.ndarray, n: int
) -> tuple[int, ...]:
    """Relabeling permutation ``cluster -> label`` maximizing overlap."""
    cluster_ids = np.asarray(cluster_ids)
    gold_labels = np.asarray(gold_labels)
    if cluster_ids.shape != gold_labels.shape:
        raise ContractError("cluster_ids and gold_labels must have equal length")
    if cluster_ids.size and (cluster_ids.min() < 0 or cluster_ids.max() >= n):
        raise ContractError(f"cluster ids must lie in [0, {n})")
    if gold_labels.size and (gold_labels.min() < 0 or gold_labels.max() >= n):
        raise ContractError(f"gold labels must lie in [0, {n})")
    table = contingency_matrix(cluster_ids, gold_labels, n)
    mapping, _ = hungarian(table.astype(np.float64), sense="max")
    return mapping


def relabel(cluster_ids: np.ndarray, mapping: tuple[int, ...]) -> np.ndarray:
    return np.asarray([mapping[int(c)] for c in cluster_ids], dtype=np.int64)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def micro_f1(predictions: np.ndarray, gold_labels: np.ndarray) -> float:
    """Micro-averaged F1.

    With every instance receiving exactly one label, micro precision equals
    micro recall equals accuracy, so this reduces to the fraction correct.
    """
    predictions = np.asarray(predictions)
    gold_labels = np.asarray(gold_labels)
    if predictions.shape != gold_labels.shape:
        raise ContractError("predictions and gold_labels must have equal length")
    if predictions.size == 0:
        raise ContractError("micro_f1 of an empty batch is undefined")
    return float(np.mean(predictions == gold_labels))


def clustering_metrics(cluster_ids: np.ndarray, gold_labels: np.ndarray) -> dict[str, float]:
    """Standard clustering scores of a predicted partition against gold.

    Degenerate single-class inputs follow the sklearn conventions: two
    identical one-cluster partitions score 1.0 everywhere; a split of a
    single gold class scores 0.0 on the mutual-information family while
    homogeneity stays 1.0 (every cluster is still pure).
    """
    c = np.asarray(cluster_ids)
    g = np.asarray(gold_labels)
    if c.shape != g.shape:
        raise ContractError("cluster_ids and gold_labels must have equal length")
    return {
        "ami": float(_skm.adjusted_mutual_info_score(g, c)),
        "fm": float(_skm.fowlkes_mallows_score(g, c)),
        "rand": float(_skm.rand_score(g, c)),
        "ari": float(_skm.adjusted_rand_score(g, c)),
        "nmi": float(_skm.normalized_mutual_info_score(g, c)),
        "homogeneity": float(_skm.homogeneity_score(g, c)),
    }


def episode_metrics(cluster_ids: np.ndarray, gold_labels: np.ndarray, n: int) -> dict[str, float]:
    """Full per-episode record: Hungarian-relabeled micro F1 plus the
    clustering scores on the raw cluster ids.  Keys match ``METRIC_KEYS``."""
    mapping = assign_clusters_to_labels(cluster_ids, gold_labels, n)
    record = {"f1": micro_f1(relabel(cluster_ids, mapping), gold_labels)}
    record.update(clustering_metrics(cluster_ids, gold_labels))
    return record


# --------------------------------------------------------------------------
# 2-D projection for feature visualization
# --------------------------------------------------------------------------

def project_2d(features: np.ndarray) -> np.ndarray:
    """Deterministic principal-axis projection onto the top-2 variance
    directions.  Rank-deficient inputs get exact zeros on the missing axis;
    component signs are fixed so the largest-magnitude loading is positive."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ContractError("project_2d needs at least 2 feature rows")
    centered = X - X.mean(axis=0, keepdims=True)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    cutoff = max(X.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    out = np.zeros((X.shape[0], 2), dtype=np.float64)
    for axis in range(min(2, vt.shape[0])):
        if s[axis] <= cutoff:
            break
        component = vt[axis]
        if component[np.argmax(np.abs(component))] < 0:
            component = -component
        out[:, axis] = centered @ component
    return out


__all__ = [
    "METRIC_KEYS",
    "ClusteringResult",
    "kmeans",
    "hungarian",
    "contingency_matrix",
    "assign_clusters_to_labels",
    "relabel",
    "micro_f1",
    "clustering_metrics",
    "episode_metrics",
    "project_2d",
]
