"""Point-cloud data model, exact kd-tree queries and voxel subsampling."""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, InvalidRadius, InvalidSpacing

logger = logging.getLogger(__name__)

# cKDTree answers are widened by this factor and then re-filtered with the
# plain numpy distance formula, so results are bit-compatible with a scan.
_WIDEN = 1e-9


class Epoch(str, enum.Enum):
    PRE = "pre"
    POST = "post"


class Mode(str, enum.Enum):
    BALL3D = "ball3d"
    DISC2D = "disc2d"


@dataclass
class PointCloud:
    """Epoch-tagged 3D points with optional per-point columns.

    ``xyz`` is an (n, 3) float64 array. ``attributes`` maps column names to
    float64 arrays of length n. ``building_id`` and ``grade`` are optional
    int arrays; simulated clouds use building_id 0 for terrain and grade -1
    for non-building points.
    """

    xyz: np.ndarray
    attributes: Dict[str, np.ndarray] = field(default_factory=dict)
    building_id: Optional[np.ndarray] = None
    grade: Optional[np.ndarray] = None
    epoch: Epoch = Epoch.PRE

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3))
        n = len(self.xyz)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")
        self.epoch = Epoch(self.epoch)
        cols = {}
        for name, col in self.attributes.items():
            col = np.asarray(col, dtype=np.float64).reshape(-1)
            if len(col) != n:
                raise ValueError(f"attribute '{name}' has {len(col)} values for {n} points")
            cols[name] = col
        self.attributes = cols
        if self.building_id is not None:
            self.building_id = np.asarray(self.building_id, dtype=np.int64).reshape(-1)
            if len(self.building_id) != n:
                raise ValueError("building_id length differs from point count")
            if n and self.building_id.min() < 0:
                raise ValueError("building_id must be >= 0")
        if self.grade is not None:
            self.grade = np.asarray(self.grade, dtype=np.int64).reshape(-1)
            if len(self.grade) != n:
                raise ValueError("grade length differs from point count")

    def __len__(self):
        return len(self.xyz)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        return PointCloud(
            self.xyz[idx],
            {k: v[idx] for k, v in self.attributes.items()},
            None if self.building_id is None else self.building_id[idx],
            None if self.grade is None else self.grade[idx],
            self.epoch,
        )

    def with_attributes(self, columns: Dict[str, np.ndarray]) -> "PointCloud":
        """Return a copy carrying extra (or replaced) attribute columns."""
        attrs = dict(self.attributes)
        attrs.update(columns)
        return PointCloud(self.xyz.copy(), attrs, self.building_id, self.grade, self.epoch)

    def translated(self, offset) -> "PointCloud":
        out = self.subset(np.arange(len(self)))
        out.xyz = out.xyz + np.asarray(offset, dtype=np.float64)
        return out

    @staticmethod
    def concatenate(clouds, epoch=None) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.empty((0, 3)), epoch=epoch or Epoch.PRE)
        names = set(clouds[0].attributes)
        for c in clouds[1:]:
            if set(c.attributes) != names:
                raise ValueError("cannot concatenate clouds with different attribute columns")
        has_bid = all(c.building_id is not None for c in clouds)
        has_grade = all(c.grade is not None for c in clouds)
        return PointCloud(
            np.concatenate([c.xyz for c in clouds]),
            {k: np.concatenate([c.attributes[k] for c in clouds]) for k in sorted(names)},
            np.concatenate([c.building_id for c in clouds]) if has_bid else None,
            np.concatenate([c.grade for c in clouds]) if has_grade else None,
            epoch or clouds[0].epoch,
        )


def _sqdist(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = points - q
    return (d * d).sum(axis=-1)


class SpatialIndex:
    """Immutable kd-tree over a cloud, answering exact 3D and planimetric queries.

    Both trees are built eagerly so the object is safe to share between
    readers. Results match a brute-force scan using ``sum((p - q)**2) <= r*r``.
    """

    def __init__(self, xyz: np.ndarray):
        xyz = np.ascontiguousarray(np.asarray(xyz, dtype=np.float64).reshape(-1, 3))
        if len(xyz) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.xyz = xyz
        self.xy = np.ascontiguousarray(xyz[:, :2])
        self._tree3 = cKDTree(self.xyz)
        self._tree2 = cKDTree(self.xy)

    def __len__(self):
        return len(self.xyz)

    def _pick(self, mode):
        mode = Mode(mode)
        if mode is Mode.BALL3D:
            return self._tree3, self.xyz
        return self._tree2, self.xy

    def radius_query(self, q, r: float, mode=Mode.BALL3D) -> np.ndarray:
        """Sorted indices of all points within distance ``r`` of ``q`` (inclusive)."""
        if r < 0:
            raise InvalidRadius(f"radius must be >= 0, got {r}")
        tree, pts = self._pick(mode)
        q = np.asarray(q, dtype=np.float64).reshape(-1)[: pts.shape[1]]
        cand = np.asarray(tree.query_ball_point(q, r * (1 + _WIDEN) + 1e-12), dtype=np.int64)
        if len(cand) == 0:
            return cand
        keep = _sqdist(pts[cand], q) <= r * r
        return np.sort(cand[keep])

    def radius_query_many(self, queries, r: float, mode=Mode.BALL3D):
        """Neighbor lists for many queries as CSR arrays ``(offsets, indices)``.

        Each row is sorted ascending.
        """
        if r < 0:
            raise InvalidRadius(f"radius must be >= 0, got {r}")
        tree, pts = self._pick(mode)
        dim = pts.shape[1]
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)[:, :dim]
        lists = tree.query_ball_point(queries, r * (1 + _WIDEN) + 1e-12, return_sorted=True)
        lengths = np.fromiter(map(len, lists), dtype=np.int64, count=len(lists))
        flat = np.fromiter(itertools.chain.from_iterable(lists), dtype=np.int64, count=int(lengths.sum()))
        owner = np.repeat(np.arange(len(queries)), lengths)
        keep = _sqdist(pts[flat], queries[owner]) <= r * r
        flat = flat[keep]
        lengths = np.bincount(owner[keep], minlength=len(queries))
        offsets = np.zeros(len(queries) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        return offsets, flat

    def count_many(self, queries, r: float, mode=Mode.BALL3D) -> np.ndarray:
        if r < 0:
            raise InvalidRadius(f"radius must be >= 0, got {r}")
        tree, pts = self._pick(mode)
        full = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(full) == 0:
            return np.empty(0, dtype=np.int64)
        queries = full[:, : pts.shape[1]]
        outer = tree.query_ball_point(queries, r * (1 + _WIDEN) + 1e-12, return_length=True)
        inner = tree.query_ball_point(queries, max(r * (1 - _WIDEN) - 1e-12, 0.0), return_length=True)
        counts = np.asarray(outer, dtype=np.int64)
        # only rows with points near the boundary need the exact formula
        unsure = np.nonzero(outer != inner)[0]
        if len(unsure):
            off, _ = self.radius_query_many(full[unsure], r, mode)
            counts[unsure] = np.diff(off)
        return counts

    def nearest_neighbor(self, q, mode=Mode.BALL3D):
        """``(index, distance)`` of the closest point; ties go to the lowest index."""
        idx, dist = self.nearest_many(np.asarray(q, dtype=np.float64).reshape(1, -1), mode)
        return int(idx[0]), float(dist[0])

    def nearest_many(self, queries, mode=Mode.BALL3D):
        tree, pts = self._pick(mode)
        dim = pts.shape[1]
        queries = np.asarray(queries, dtype=np.float64).reshape(len(queries), -1)
        if queries.shape[1] < dim:
            raise ValueError("query dimension too small")
        queries = np.ascontiguousarray(queries[:, :dim])
        if len(queries) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        k = min(2, len(pts))
        d, i = tree.query(queries, k=k)
        if k == 1:
            d = d[:, None]
            i = i[:, None]
        idx = i[:, 0].astype(np.int64)
        # possible ties are resolved exactly against the scan formula
        if k == 2:
            suspect = np.nonzero(d[:, 1] <= d[:, 0] * (1 + 1e-9) + 1e-15)[0]
            for s in suspect:
                q = queries[s]
                cand = np.asarray(tree.query_ball_point(q, d[s, 0] * (1 + 1e-6) + 1e-12), dtype=np.int64)
                sq = _sqdist(pts[cand], q)
                best = sq.min()
                idx[s] = cand[sq == best].min()
        dist = np.sqrt(_sqdist(pts[idx], queries))
        return idx, dist


def build_index(cloud) -> SpatialIndex:
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(xyz)


def radius_query(index: SpatialIndex, q, r, mode=Mode.BALL3D) -> np.ndarray:
    return index.radius_query(q, r, mode)


def nearest_neighbor(index: SpatialIndex, q, mode=Mode.BALL3D):
    return index.nearest_neighbor(q, mode)


def subsample_to_spacing(cloud: PointCloud, spacing: float, seed: int = 0) -> PointCloud:
    """Voxel-grid subsampling keeping the point nearest each occupied voxel center.

    The grid is anchored at the coordinate origin so two epochs subsampled
    with the same spacing share voxel boundaries. Exact distance ties are
    broken by a seeded random priority. Surviving points keep their
    original relative order.
    """
    if not spacing > 0:
        raise InvalidSpacing(f"spacing must be > 0, got {spacing}")
    n = len(cloud)
    if n == 0:
        return cloud.subset(np.arange(0))
    cell = np.floor(cloud.xyz / spacing)
    center = (cell + 0.5) * spacing
    dist = _sqdist(cloud.xyz, center)
    cell = cell.astype(np.int64)
    priority = np.random.default_rng(seed).permutation(n)
    order = np.lexsort((priority, dist, cell[:, 2], cell[:, 1], cell[:, 0]))
    c = cell[order]
    first = np.ones(n, dtype=bool)
    first[1:] = np.any(c[1:] != c[:-1], axis=1)
    keep = np.sort(order[first])
    return cloud.subset(keep)


def mean_nn_spacing(xyz: np.ndarray) -> float:
    """Mean distance from each point to its nearest other point."""
    tree = cKDTree(xyz)
    d, _ = tree.query(xyz, k=2)
    return float(d[:, 1].mean())
