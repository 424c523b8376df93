"""Rigid pre/post alignment on stable areas and an alignment-quality check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, EmptyStableArea
from .features import orient_normals
from .pointcloud import Mode, PointCloud, SpatialIndex

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.det(R) - 1.0) > 1e-9 or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_euler_z(cls, angle_deg: float, translation=(0.0, 0.0, 0.0), center=(0.0, 0.0, 0.0)):
        """Rotation about a vertical axis through ``center``, then a translation."""
        a = np.deg2rad(angle_deg)
        R = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
        c = np.asarray(center, dtype=np.float64)
        return cls(R, c - R @ c + np.asarray(translation, dtype=np.float64))

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz) @ self.rotation.T + self.translation

    def apply_cloud(self, cloud: PointCloud) -> PointCloud:
        out = cloud.subset(np.arange(len(cloud)))
        out.xyz = self.apply(cloud.xyz)
        return out

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


def _fit_rigid(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation/translation mapping src onto dst (Kabsch/Umeyama)."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def _check_stable(xyz: np.ndarray, what: str):
    if len(xyz) < 3:
        raise DegenerateGeometry(f"{what}: need >= 3 stable points, got {len(xyz)}")
    s = np.linalg.svd(xyz - xyz.mean(axis=0), compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateGeometry(f"{what}: stable points are collinear")


def align_icp(
    moving: PointCloud,
    fixed: PointCloud,
    stable_mask,
    max_iter: int = 100,
    tol: float = 1e-9,
    fixed_mask=None,
) -> RigidTransform:
    """Point-to-point ICP over stable subsets; returns the moving->fixed transform.

    ``stable_mask`` selects stable points of ``moving``; ``fixed_mask``
    (default: same mask if lengths agree, else all points) those of ``fixed``.
    Stops when the mean residual changes by less than ``tol`` meters.
    """
    stable_mask = np.asarray(stable_mask, dtype=bool)
    if fixed_mask is None:
        fixed_mask = stable_mask if len(stable_mask) == len(fixed) else np.ones(len(fixed), dtype=bool)
    src = moving.xyz[stable_mask]
    dst = fixed.xyz[np.asarray(fixed_mask, dtype=bool)]
    _check_stable(src, "moving")
    _check_stable(dst, "fixed")

    index = SpatialIndex(dst)
    R = np.eye(3)
    t = np.zeros(3)
    prev = np.inf
    for it in range(max_iter):
        cur = src @ R.T + t
        j, d = index.nearest_many(cur)
        err = float(d.mean())
        if abs(prev - err) < tol:
            break
        prev = err
        dR, dt = _fit_rigid(cur, dst[j])
        R = dR @ R
        t = dR @ t + dt
    # re-orthonormalize accumulated rotation
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    logger.debug("icp finished after %d iterations, mean residual %.3g m", it + 1, prev)
    return RigidTransform(R, t)


def signed_distances(pre: PointCloud, post: PointCloud, stable_mask, radius: float = 1.0, post_mask=None):
    """Distance from each stable pre point to its nearest post point, projected
    on the upward-oriented local pre-cloud normal."""
    stable_mask = np.asarray(stable_mask, dtype=bool)
    rows = np.nonzero(stable_mask)[0]
    if len(rows) == 0:
        raise EmptyStableArea("no stable pre-event points")
    post_xyz = post.xyz if post_mask is None else post.xyz[np.asarray(post_mask, dtype=bool)]
    if len(post_xyz) == 0:
        raise EmptyStableArea("no stable post-event points")

    pre_index = SpatialIndex(pre.xyz)
    offsets, flat = pre_index.radius_query_many(pre.xyz[rows], radius, Mode.BALL3D)
    counts = np.diff(offsets)
    owner = np.repeat(np.arange(len(rows)), counts)
    pts = pre.xyz[flat]
    cnt = counts.astype(np.float64)
    centroid = np.column_stack([np.bincount(owner, weights=pts[:, k], minlength=len(rows)) for k in range(3)])
    centroid /= cnt[:, None]
    d = pts - centroid[owner]
    cov = np.empty((len(rows), 3, 3))
    for a in range(3):
        for b in range(3):
            cov[:, a, b] = np.bincount(owner, weights=d[:, a] * d[:, b], minlength=len(rows)) / cnt
    _, vec = np.linalg.eigh(cov)
    normal = orient_normals(vec[:, :, 0])

    post_index = SpatialIndex(post_xyz)
    j, _ = post_index.nearest_many(pre.xyz[rows])
    dist = ((post_xyz[j] - pre.xyz[rows]) * normal).sum(axis=1)
    return dist[counts >= 3]


def alignment_quality(pre: PointCloud, post: PointCloud, stable_mask, radius: float = 1.0, post_mask=None) -> float:
    """Standard deviation of normal-projected closest-point distances on stable areas."""
    dist = signed_distances(pre, post, stable_mask, radius, post_mask)
    if len(dist) == 0:
        raise EmptyStableArea("stable points have no usable local normal")
    return float(dist.std())
