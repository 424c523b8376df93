"""Per-point change of geometric features between two epochs.

Rows are anchored on pre-event points. Deltas are post minus pre, so
material loss reads as negative height change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import FeatureMismatch
from .features import Feature, FeatureTable
from .pointcloud import Mode, PointCloud, SpatialIndex

D_Z = "d_z"
NN_DISTANCE = "nn_distance"


@dataclass
class ChangeTable:
    """Signed feature deltas per pre-event point.

    ``deltas[Feature.NORMAL_VECTOR]`` holds the normal-angle change in
    degrees (0..90). Rows not in the anchor subset are NaN.
    """

    radius: float
    deltas: Dict[Feature, np.ndarray] = field(default_factory=dict)
    dz: np.ndarray = None
    nn_distance: np.ndarray = None

    def __len__(self):
        return len(self.dz)

    @property
    def features(self):
        return tuple(self.deltas)

    def __getitem__(self, key):
        return self.deltas[Feature(key)]

    def rows(self, idx) -> "ChangeTable":
        idx = np.asarray(idx)
        return ChangeTable(
            self.radius,
            {f: v[idx] for f, v in self.deltas.items()},
            self.dz[idx],
            self.nn_distance[idx],
        )

    def to_attributes(self) -> Dict[str, np.ndarray]:
        cols = {f"d_{f.value}": v for f, v in self.deltas.items()}
        cols[D_Z] = self.dz
        cols[NN_DISTANCE] = self.nn_distance
        return cols

    @classmethod
    def from_attributes(cls, attributes, radius: float) -> "ChangeTable":
        deltas = {}
        for f in Feature:
            name = f"d_{f.value}"
            if name in attributes:
                deltas[f] = np.asarray(attributes[name], dtype=np.float64)
        if D_Z not in attributes or NN_DISTANCE not in attributes:
            raise FeatureMismatch("change columns d_z / nn_distance missing")
        return cls(radius, deltas, np.asarray(attributes[D_Z]), np.asarray(attributes[NN_DISTANCE]))


def normal_angle_deg(n_pre: np.ndarray, n_post: np.ndarray) -> np.ndarray:
    """Unoriented angle between normals, in [0, 90] degrees."""
    # atan2 stays accurate near 0 and 90 degrees where arccos does not
    dot = np.abs((n_pre * n_post).sum(axis=1))
    cross = np.linalg.norm(np.cross(n_pre, n_post), axis=1)
    return np.degrees(np.arctan2(cross, dot))


def compute_change(
    pre: PointCloud,
    pre_features: FeatureTable,
    post: PointCloud,
    post_features: FeatureTable,
    post_index: SpatialIndex,
    anchors=None,
    column_radius: Optional[float] = None,
) -> ChangeTable:
    """Feature deltas between each pre point and its closest post point.

    Scalar deltas use the 3D nearest post point. The height change uses the
    planimetric neighborhood: with ``column_radius=None`` it is the height
    difference to the 2D nearest post point; with a radius it is the
    smallest height difference among post points within that horizontal
    distance (falling back to the 2D nearest point when the column is
    empty), which keeps vertical façades from reading as height change.
    """
    pre_features.check_compatible(post_features)
    if len(post_index) != len(post):
        raise FeatureMismatch("post index was not built over the post cloud")
    n = len(pre)
    rows = np.arange(n) if anchors is None else np.unique(np.asarray(anchors, dtype=np.int64))
    q = pre.xyz[rows]

    deltas = {}
    dz = np.full(n, np.nan)
    nnd = np.full(n, np.nan)
    j3, d3 = post_index.nearest_many(q, Mode.BALL3D)
    nnd[rows] = d3
    for f in pre_features.features:
        col = np.full(n, np.nan)
        if f is Feature.NORMAL_VECTOR:
            col[rows] = normal_angle_deg(pre_features[f][rows], post_features[f][j3])
        else:
            col[rows] = post_features[f][j3] - pre_features[f][rows]
        deltas[f] = col

    dz[rows] = height_change(post, post_index, q, column_radius)
    return ChangeTable(pre_features.radius, deltas, dz, nnd)


def height_change(post: PointCloud, post_index: SpatialIndex, q: np.ndarray, column_radius=None) -> np.ndarray:
    j2, _ = post_index.nearest_many(q, Mode.DISC2D)
    dz = post.xyz[j2, 2] - q[:, 2]
    if column_radius is None or len(q) == 0:
        return dz
    offsets, flat = post_index.radius_query_many(q, column_radius, Mode.DISC2D)
    counts = np.diff(offsets)
    has = counts > 0
    if has.any():
        owner = np.repeat(np.arange(len(q)), counts)
        diff = post.xyz[flat, 2] - q[owner, 2]
        mag = np.abs(diff)
        # smallest |dz| per row; ties resolved toward the lower post index
        order = np.lexsort((flat, mag, owner))
        first = np.ones(len(order), dtype=bool)
        first[1:] = owner[order][1:] != owner[order][:-1]
        pick = order[first]
        dz[owner[pick]] = diff[pick]
    return dz
