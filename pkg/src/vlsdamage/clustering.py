"""Changed/unchanged split of building points with two-cluster k-means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .change import ChangeTable
from .errors import Degenerate, EmptyBuilding, FeatureMismatch
from .features import Feature

CHANGED = 1
UNCHANGED = 0


def kmeans2(samples, seed: int = 0, max_iter: int = 100):
    """Lloyd's algorithm with k=2 and k-means++ seeding.

    Returns ``(labels, centroids)``; labels are 0/1 indices into centroids.
    Raises :class:`Degenerate` when all samples coincide.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < 2 or np.all(X == X[0]):
        raise Degenerate("k-means needs at least two distinct samples")
    rng = np.random.default_rng(seed)

    first = X[rng.integers(len(X))]
    d2 = ((X - first) ** 2).sum(axis=1)
    total = d2.sum()
    if total > 0 and np.isfinite(total):
        second = X[rng.choice(len(X), p=d2 / total)]
    else:
        # squared distances under- or overflowed; take the farthest sample
        second = X[int(np.argmax(np.abs(X - first).max(axis=1)))]
    centroids = np.stack([first, second])

    labels = None
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)  # ties -> cluster 0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(2):
            members = X[labels == k]
            if len(members):
                centroids[k] = members.mean(axis=0)
            else:
                # re-seed an emptied cluster at the worst-served sample
                far = int(np.argmax(dist[np.arange(len(X)), labels]))
                centroids[k] = X[far]
                labels[far] = k
    return labels, centroids


@dataclass
class ClusterResult:
    labels: np.ndarray  # CHANGED / UNCHANGED per building point
    centroids: np.ndarray  # standardized (d_curvature, d_z) space; empty when skipped
    damaged_share: float
    skipped: bool = False

    @property
    def n_changed(self) -> int:
        return int((self.labels == CHANGED).sum())

    @property
    def bypass_no_damage(self) -> bool:
        """No changed points: the building is graded as undamaged without classification."""
        return self.n_changed == 0


def extract_changed_points(
    changes: ChangeTable,
    seed: int = 0,
    epsilon_noise=(0.05, 0.05),
    max_iter: int = 100,
) -> ClusterResult:
    """Cluster one building's change rows on (d_curvature, d_z).

    ``epsilon_noise`` is ``(curvature_eps, height_eps_m)`` or a single value
    used for both. If the raw standard deviation of both deltas is below
    its epsilon, clustering is skipped and every point is unchanged. Rows
    with a missing curvature delta are treated as zero curvature change.
    """
    if Feature.CURVATURE not in changes.deltas:
        raise FeatureMismatch("change table lacks the curvature delta")
    n = len(changes)
    if n == 0:
        raise EmptyBuilding("building has no points")
    eps_c, eps_z = (epsilon_noise, epsilon_noise) if np.isscalar(epsilon_noise) else epsilon_noise

    dc = np.nan_to_num(changes[Feature.CURVATURE], nan=0.0)
    dz = np.nan_to_num(changes.dz, nan=0.0)
    raw = np.column_stack([dc, dz])
    std = raw.std(axis=0)
    if std[0] < eps_c and std[1] < eps_z:
        return ClusterResult(np.zeros(n, dtype=np.int64), np.empty((0, 2)), 0.0, skipped=True)

    scale = np.where(std > 0, std, 1.0)
    z = (raw - raw.mean(axis=0)) / scale
    try:
        labels, centroids = kmeans2(z, seed=seed, max_iter=max_iter)
    except Degenerate:
        return ClusterResult(np.zeros(n, dtype=np.int64), np.empty((0, 2)), 0.0, skipped=True)

    norms = np.linalg.norm(z, axis=1)
    mean_norm = [norms[labels == k].mean() if np.any(labels == k) else -np.inf for k in range(2)]
    changed = int(np.argmax(mean_norm))
    out = np.where(labels == changed, CHANGED, UNCHANGED).astype(np.int64)
    if changed == 1:
        centroids = centroids[::-1].copy()
    return ClusterResult(out, centroids, float(out.sum()) / n)
