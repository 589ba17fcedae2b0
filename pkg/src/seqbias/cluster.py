"""Spherical k-means with cosine distance and silhouette-based selection of k."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_ITERS = 300
SILHOUETTE_SAMPLE_LIMIT = 2000


@dataclass
class ClusterModel:
    centroids: np.ndarray        # (k, d), unit rows
    assignment: np.ndarray       # (n,) int cluster ids
    k: int
    inertia: float               # mean cosine distance to assigned centroid
    degenerate: bool = False     # empty clusters were dropped
    objective_trace: list = field(default_factory=list)

    def assign(self, embeddings):
        """Nearest-centroid (cosine) assignment for new embeddings."""
        x = normalize_rows(np.asarray(embeddings, dtype=np.float64))
        return np.argmax(x @ self.centroids.T, axis=1)


def normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding cannot be placed on the sphere")
    return x / norms


def _kmeanspp_init(x, k, rng):
    """k-means++ seeding with cosine distance d = 1 - x.c."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    idx = int(rng.integers(n))
    centers[0] = x[idx]
    d2 = np.maximum(1.0 - x @ centers[0], 0.0) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 1e-15:
            idx = int(rng.integers(n))  # all points coincide with a center
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.maximum(1.0 - x @ centers[j], 0.0) ** 2)
    return centers


def spherical_kmeans(embeddings, k, seed=0, init_centroids=None):
    """Lloyd iterations on the unit sphere; empty clusters are re-seeded from
    the point farthest from its centroid, or dropped when all points coincide.
    """
    x = normalize_rows(np.asarray(embeddings, dtype=np.float64))
    n = x.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least k={k} embeddings, got {n}")
    rng = np.random.default_rng((seed, k))
    if init_centroids is None:
        centroids = _kmeanspp_init(x, k, rng)
    else:
        centroids = normalize_rows(np.asarray(init_centroids, dtype=np.float64))
    prev = None
    trace = []
    degenerate = False
    for _ in range(MAX_ITERS):
        sims = x @ centroids.T
        assign = np.argmax(sims, axis=1)
        dist = 1.0 - sims[np.arange(n), assign]
        for c in range(k):
            if np.any(assign == c):
                continue
            far = int(np.argmax(dist))
            if dist[far] <= 1e-15:
                degenerate = True  # nothing to split off
                continue
            assign[far] = c
            centroids[c] = x[far]
            dist[far] = 0.0
        trace.append(float(dist.mean()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        for c in range(k):
            members = assign == c
            if not np.any(members):
                continue
            mean = x[members].mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 1e-15:
                centroids[c] = mean / norm
    used = np.unique(assign)
    if len(used) < k:
        # compact away clusters that could not be filled
        remap = {int(c): i for i, c in enumerate(used)}
        assign = np.array([remap[int(c)] for c in assign])
        centroids = centroids[used]
        degenerate = True
        k = len(used)
    sims = x @ centroids.T
    inertia = float(np.mean(1.0 - sims[np.arange(n), assign]))
    return ClusterModel(centroids=centroids, assignment=assign, k=k,
                        inertia=inertia, degenerate=degenerate,
                        objective_trace=trace)


def silhouette(embeddings, assignment, sample_limit=SILHOUETTE_SAMPLE_LIMIT,
               seed=0):
    """Mean silhouette with cosine distance; singleton members contribute 0.

    For runs larger than sample_limit the score is computed on a uniform
    subsample (seeded), trading exactness for O(n^2) cost control.
    """
    x = normalize_rows(np.asarray(embeddings, dtype=np.float64))
    assignment = np.asarray(assignment)
    if len(np.unique(assignment)) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    if sample_limit and len(x) > sample_limit:
        rng = np.random.default_rng((seed, 0x5110))
        keep = rng.choice(len(x), size=sample_limit, replace=False)
        keep.sort()
        x, assignment = x[keep], assignment[keep]
        if len(np.unique(assignment)) < 2:
            return 0.0
    dist = np.maximum(1.0 - x @ x.T, 0.0)
    labels = np.unique(assignment)
    counts = {int(c): int(np.sum(assignment == c)) for c in labels}
    scores = np.zeros(len(x))
    # mean distance from every point to every cluster
    means = np.stack([dist[:, assignment == c].mean(axis=1) for c in labels],
                     axis=1)
    col = {int(c): i for i, c in enumerate(labels)}
    for i in range(len(x)):
        c = int(assignment[i])
        size = counts[c]
        if size == 1:
            continue
        a = means[i, col[c]] * size / (size - 1)  # exclude self-distance 0
        b = np.min([means[i, col[o]] for o in counts if o != c])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def select_k(embeddings, k_range, seed=0):
    """Fit every k and keep the silhouette-maximizing model, ties to smaller k."""
    k_range = list(k_range)
    if not k_range:
        raise ValueError("k_range is empty")
    best, best_score = None, -np.inf
    for k in sorted(k_range):
        fit = spherical_kmeans(embeddings, k, seed=seed)
        if fit.k < 2:
            continue
        score = silhouette(embeddings, fit.assignment, seed=seed)
        if score > best_score:
            best, best_score = fit, score
    if best is None:
        raise ValueError("no k in range produced >= 2 nonempty clusters")
    best.silhouette_score = best_score
    return best


def default_k_range(n_classes=4):
    """k sweep for the synthetic harness: fine steps up to 6*n_classes, then
    a coarser tail to 10*n_classes.

    The tail sits above the 6*n_classes rule used for real tasks because at
    desk scale the circle-position manifold fragments slowly and the feature
    cluster only separates cleanly from bystander frames at larger k.
    """
    fine = list(range(n_classes, 6 * n_classes + 1, 2))
    coarse = list(range(7 * n_classes, 10 * n_classes + 1, n_classes))
    return fine + coarse
