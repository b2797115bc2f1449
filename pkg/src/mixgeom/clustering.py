"""Coherent-structure extraction: k-means on the eigenfunction embedding.

Nodes are embedded by their values under the leading eigenfunctions and
partitioned with Lloyd's algorithm under k-means++ initialization, restarted
a fixed number of times with a seeded generator; the run with the smallest
inertia wins (ties break toward the earlier restart), making the assignment
fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

_MAX_LLOYD_ITER = 300
_RESEED_CAP = 10


@dataclass
class SpectralEmbedding:
    """Node coordinates in eigenfunction space."""

    points: np.ndarray
    included_indices: tuple[int, ...]


@dataclass
class ClusterAssignment:
    """A k-means partition: labels, centroids, inertia, and the seed used."""

    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    seed: int


def build_embedding(result, k: int, drop_first: bool = False) -> SpectralEmbedding:
    """Embedding by the leading k eigenfunctions (optionally without the flat one).

    ``result`` is a spectral result; columns 1..k are used, or 2..k with
    ``drop_first`` (dropping the constant eigenfunction shifts all points by
    a fixed vector and cannot change any k-means partition).
    """
    vecs = result.eigenfunctions
    if k > vecs.shape[1]:
        raise ValueError(f"embedding needs {k} eigenfunctions, result has {vecs.shape[1]}")
    start = 1 if drop_first else 0
    indices = tuple(range(start + 1, k + 1))
    return SpectralEmbedding(points=vecs[:, start:k].copy(),
                             included_indices=indices)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) matrix of squared Euclidean distances
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _squared_distances(points, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centroids[j] = points[idx]
        closest = np.minimum(closest, _squared_distances(points, centroids[j:j + 1])[:, 0])
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    k = len(centroids)
    labels = np.full(len(points), -1)
    for _ in range(_MAX_LLOYD_ITER):
        dist = _squared_distances(points, centroids)
        new_labels = dist.argmin(axis=1)
        for _ in range(_RESEED_CAP):
            empty = np.setdiff1d(np.arange(k), new_labels)
            if len(empty) == 0:
                break
            # move each empty centroid onto the point farthest from its own
            current = dist[np.arange(len(points)), new_labels]
            for c in empty:
                idx = int(np.argmax(current))
                centroids[c] = points[idx]
                current[idx] = -1.0
            dist = _squared_distances(points, centroids)
            new_labels = dist.argmin(axis=1)
        else:
            raise RuntimeError("empty cluster persisted past the reseeding cap")
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
    dist = _squared_distances(points, centroids)
    inertia = float(dist[np.arange(len(points)), labels].sum())
    return labels, centroids, inertia


def kmeans(embedding: SpectralEmbedding, k: int, restarts: int = 20,
           seed: int = 0) -> ClusterAssignment:
    """Best-of-restarts k-means partition of the embedded nodes.

    Runs Lloyd's algorithm from ``restarts`` k-means++ initializations drawn
    from one seeded generator and keeps the run with the smallest inertia
    (earlier restart on ties). Deterministic given (embedding, k, restarts,
    seed).
    """
    points = np.asarray(embedding.points, dtype=float)
    n = len(points)
    if k < 2:
        raise ValueError("need at least 2 clusters")
    if k > n:
        raise ValueError(f"cannot split {n} points into {k} clusters")
    if restarts < 1:
        raise ValueError("need at least 1 restart")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centroids = _kmeanspp_init(points, k, rng)
        labels, cents, inertia = _lloyd(points, centroids.copy())
        if best is None or inertia < best[2]:
            best = (labels, cents, inertia)
    labels, cents, inertia = best
    return ClusterAssignment(labels=labels, centroids=cents,
                             inertia=inertia, seed=seed)


def match_labels(labels_a, labels_b, k: int | None = None) -> tuple[np.ndarray, float]:
    """Optimal label permutation between two partitions (Hungarian matching).

    Returns ``(perm, agreement)`` where ``perm[j]`` is the label in ``a``
    matched to label j of ``b`` and ``agreement`` the fraction of nodes on
    which the permuted partitions coincide.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label vectors must have equal length")
    k = k if k is not None else int(max(a.max(), b.max())) + 1
    confusion = np.zeros((k, k))
    np.add.at(confusion, (a, b), 1.0)
    rows, cols = linear_sum_assignment(-confusion)
    perm = np.empty(k, dtype=int)
    perm[cols] = rows
    agreement = float(confusion[rows, cols].sum() / len(a))
    return perm, agreement


def two_level_fit(values: np.ndarray) -> tuple[float, float]:
    """Optimal two-level (1-d 2-means) fit of a value distribution.

    Exact scan over sorted split points; returns the two level values
    (low, high).
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    if n < 2:
        return float(v[0]), float(v[0])
    prefix = np.concatenate([[0.0], np.cumsum(v)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(v * v)])
    counts = np.arange(1, n)
    left_sum = prefix[1:-1]
    right_sum = prefix[-1] - left_sum
    left_cost = prefix_sq[1:-1] - left_sum ** 2 / counts
    right_cost = (prefix_sq[-1] - prefix_sq[1:-1]) - right_sum ** 2 / (n - counts)
    split = int(np.argmin(left_cost + right_cost)) + 1
    return float(v[:split].mean()), float(v[split:].mean())


def bimodality_score(values) -> float:
    """Fraction of values within 10% of either of the two dominant levels.

    The levels come from an exact two-level fit; "within 10%" means within
    a tenth of the level separation.
    """
    v = np.asarray(values, dtype=float)
    lo, hi = two_level_fit(v)
    tol = 0.1 * abs(hi - lo)
    near = np.minimum(np.abs(v - lo), np.abs(v - hi)) <= tol
    return float(near.mean())


@dataclass
class IndicatorPair:
    """Sum/difference combinations of an eigenvector pair with bimodality scores."""

    plus: np.ndarray
    minus: np.ndarray
    score_plus: float
    score_minus: float
    score: float


def indicator_rotation_check(w2, w3) -> IndicatorPair:
    """Near-indicator combinations w2 + w3 and w2 - w3 of a two-structure pair.

    For an ideal two-component indicator subspace both combinations are
    exactly two-valued and the bimodality score is 1; the aggregate score is
    the smaller of the two per-combination scores.
    """
    w2 = np.asarray(w2, dtype=float)
    w3 = np.asarray(w3, dtype=float)
    plus = w2 + w3
    minus = w2 - w3
    sp = bimodality_score(plus)
    sm = bimodality_score(minus)
    return IndicatorPair(plus=plus, minus=minus, score_plus=sp,
                         score_minus=sm, score=min(sp, sm))
