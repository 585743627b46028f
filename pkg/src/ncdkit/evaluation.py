"""Clustering evaluation: Hungarian-matched accuracy and a k-means baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, PreconditionError
from .numerics import RngState, _mix64


@dataclass
class AccResult:
    acc: float
    permutation: list[int]       # predicted cluster -> true class
    contingency: np.ndarray      # [Cu, Cu] counts, rows predicted, cols true


def hungarian(cost) -> tuple[list[int], float]:
    """Minimum-cost assignment on a square matrix, O(n^3).

    Classic potentials formulation: rows are inserted one at a time and the
    shortest augmenting path over reduced costs extends the matching.
    Returns (assignment, total) with assignment[row] = column.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost matrix must be square, got shape {cost.shape}")
    if cost.shape[0] < 1:
        raise DimensionError("cost matrix must be at least 1x1")
    if not np.all(np.isfinite(cost)):
        raise NumericError("non-finite entries in cost matrix")

    n = cost.shape[0]
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)   # match[col] = row occupying col (1-based, 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    assignment = [0] * n
    for j in range(1, n + 1):
        assignment[match[j] - 1] = j - 1
    total = float(sum(cost[i][assignment[i]] for i in range(n)))
    return assignment, total


def clustering_acc(y_true, y_pred, n_clusters: int) -> AccResult:
    """Accuracy under the best one-to-one map from predicted clusters to classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size < 1:
        raise DimensionError("label arrays must be equal-length 1-d and nonempty")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.min() < 0 or arr.max() >= n_clusters:
            raise PreconditionError(f"{name} label out of range [0, {n_clusters})")
    contingency = np.zeros((n_clusters, n_clusters), dtype=np.int64)
    np.add.at(contingency, (y_pred, y_true), 1)
    cost = contingency.max() - contingency
    perm, _ = hungarian(cost)
    hits = sum(contingency[c, perm[c]] for c in range(n_clusters))
    return AccResult(acc=float(hits) / y_true.size, permutation=perm, contingency=contingency)


def _plus_plus_seeds(X: np.ndarray, k: int, rng: RngState) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.below(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = X[rng.below(n)]
            continue
        target = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), target, side="right"))
        idx = min(idx, n - 1)
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    k = centers.shape[0]
    labels = np.zeros(X.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        dists = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dists, axis=1)
        new_centers = centers.copy()
        point_d2 = dists[np.arange(X.shape[0]), labels]
        for c in range(k):
            members = labels == c
            if members.any():
                new_centers[c] = X[members].mean(axis=0)
            else:
                # re-seed an empty cluster from the farthest point
                far = int(np.argmax(point_d2))
                new_centers[c] = X[far]
                point_d2[far] = 0.0
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    dists = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(X.shape[0]), labels].sum())
    return labels, inertia


def kmeans(X, k: int, restarts: int = 10, max_iter: int = 300,
           rng: RngState | None = None, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding, best of several restarts.

    Restarts run on independently derived streams; the winner is the lowest
    inertia with ties going to the earlier restart, so the outcome is a pure
    function of (X, k, seed).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected [U, d] points, got shape {X.shape}")
    if X.shape[0] < k:
        raise PreconditionError(f"need at least k={k} points, got {X.shape[0]}")
    rng = rng or RngState(0)
    base = int(rng._raw(1)[0])
    best_labels, best_inertia = None, float("inf")
    for r in range(restarts):
        sub = RngState(_mix64(base + r))
        centers = _plus_plus_seeds(X, k, sub)
        labels, inertia = _lloyd(X, centers, max_iter, tol)
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    return best_labels, best_inertia
