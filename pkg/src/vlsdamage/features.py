"""Per-point geometric features over fixed-radius neighborhoods.

All eigen-derived features come from the population covariance of the
Ball3D neighborhood (the feature point included). Points with fewer than
three neighborhood members carry NaN for every feature that needs a
covariance; NaN is the missing-value marker used throughout the package.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .errors import FeatureMismatch, InsufficientNeighbors, InvalidRadius, UnknownFeature
from .pointcloud import Mode, PointCloud, SpatialIndex

MISSING = np.nan


class Feature(str, enum.Enum):
    LINEARITY = "linearity"
    PLANARITY = "planarity"
    SPHERICITY = "sphericity"
    OMNIVARIANCE = "omnivariance"
    ANISOTROPY = "anisotropy"
    EIGENENTROPY = "eigenentropy"
    SURFACE_VARIATION = "surface_variation"
    CURVATURE = "curvature"
    VERTICALITY = "verticality"
    ROUGHNESS = "roughness"
    NUM_NEIGHBORS = "num_neighbors"
    POINT_DENSITY_2D = "point_density_2d"
    SURFACE_DENSITY = "surface_density"
    VOLUME_DENSITY = "volume_density"
    Z_RANK = "z_rank"
    Z_RANGE = "z_range"
    LAMBDA1 = "lambda1"
    LAMBDA2 = "lambda2"
    LAMBDA3 = "lambda3"
    SUM_LAMBDA = "sum_lambda"
    NORMAL_VECTOR = "normal_vector"


ALL_FEATURES = tuple(Feature)

# Robust set reported for real ULS/DIM pairs; used as the default selection.
DEFAULT_ROBUST_FEATURES = (
    Feature.PLANARITY,
    Feature.SURFACE_VARIATION,
    Feature.POINT_DENSITY_2D,
    Feature.NUM_NEIGHBORS,
    Feature.SURFACE_DENSITY,
    Feature.VOLUME_DENSITY,
    Feature.ROUGHNESS,
    Feature.Z_RANK,
    Feature.Z_RANGE,
    Feature.NORMAL_VECTOR,
)


def parse_features(ids: Optional[Iterable]) -> tuple:
    if ids is None:
        return ALL_FEATURES
    out = []
    for f in ids:
        try:
            feat = Feature(f.value if isinstance(f, Feature) else str(f).lower())
        except ValueError:
            raise UnknownFeature(f"unknown feature id: {f!r}") from None
        if feat not in out:
            out.append(feat)
    return tuple(out)


@dataclass
class EigenStructure:
    lambdas: np.ndarray  # descending
    normal: np.ndarray

    @property
    def lambda1(self):
        return float(self.lambdas[0])

    @property
    def lambda2(self):
        return float(self.lambdas[1])

    @property
    def lambda3(self):
        return float(self.lambdas[2])


@dataclass
class FeatureTable:
    """Feature columns for every point of one cloud at one radius.

    Scalar features are (n,) arrays; ``normal_vector`` is (n, 3).
    """

    radius: float
    values: Dict[Feature, np.ndarray] = field(default_factory=dict)

    @property
    def features(self) -> tuple:
        return tuple(self.values)

    def __len__(self):
        for v in self.values.values():
            return len(v)
        return 0

    def __getitem__(self, key) -> np.ndarray:
        return self.values[Feature(key)]

    def check_compatible(self, other: "FeatureTable"):
        if abs(self.radius - other.radius) > 1e-12:
            raise FeatureMismatch(f"radius mismatch: {self.radius} vs {other.radius}")
        if set(self.values) != set(other.values):
            raise FeatureMismatch("feature sets differ between tables")

    def to_attributes(self) -> Dict[str, np.ndarray]:
        """PLY property columns named ``f_<feature>_<radius_cm>``."""
        rcm = int(round(self.radius * 100))
        cols = {}
        for feat, v in self.values.items():
            if feat is Feature.NORMAL_VECTOR:
                for k, axis in enumerate("xyz"):
                    cols[f"f_{feat.value}_{axis}_{rcm}"] = v[:, k]
            else:
                cols[f"f_{feat.value}_{rcm}"] = v
        return cols

    @classmethod
    def from_attributes(cls, attributes: Dict[str, np.ndarray], radius: float) -> "FeatureTable":
        rcm = int(round(radius * 100))
        values = {}
        for feat in Feature:
            if feat is Feature.NORMAL_VECTOR:
                names = [f"f_{feat.value}_{a}_{rcm}" for a in "xyz"]
                if all(n in attributes for n in names):
                    values[feat] = np.column_stack([attributes[n] for n in names])
            else:
                name = f"f_{feat.value}_{rcm}"
                if name in attributes:
                    values[feat] = np.asarray(attributes[name], dtype=np.float64)
        if not values:
            raise FeatureMismatch(f"no feature columns for radius {radius} m")
        return cls(radius, values)


def orient_normals(normals: np.ndarray) -> np.ndarray:
    """Flip normals so n_z >= 0; on exact ties fall back to n_x, then n_y."""
    n = np.array(normals, dtype=np.float64, copy=True)
    flip = (n[:, 2] < 0) | ((n[:, 2] == 0) & ((n[:, 0] < 0) | ((n[:, 0] == 0) & (n[:, 1] < 0))))
    n[flip] *= -1
    return n


def _eig_sorted(cov: np.ndarray):
    w, v = np.linalg.eigh(cov)
    w = np.clip(w[:, ::-1], 0.0, None)
    v = v[:, :, ::-1]
    return w, v


def local_eigenstructure(index: SpatialIndex, cloud: PointCloud, p: int, r: float) -> EigenStructure:
    nb = index.radius_query(cloud.xyz[p], r, Mode.BALL3D)
    if len(nb) < 3:
        raise InsufficientNeighbors(f"point {p} has {len(nb)} neighbors within {r} m")
    pts = cloud.xyz[nb]
    d = pts - pts.mean(axis=0)
    cov = d.T @ d / len(pts)
    w, v = _eig_sorted(cov[None])
    return EigenStructure(w[0], orient_normals(v[0, :, 2][None])[0])


def _chunks(offsets: np.ndarray, max_pairs: int):
    """Split CSR rows into consecutive chunks holding at most ~max_pairs entries."""
    m = len(offsets) - 1
    start = 0
    while start < m:
        stop = int(np.searchsorted(offsets, offsets[start] + max_pairs, side="right")) - 1
        stop = max(stop, start + 1)
        stop = min(stop, m)
        yield start, stop
        start = stop


def compute_features(
    cloud: PointCloud,
    index: SpatialIndex,
    r: float,
    ids=None,
    subset=None,
    max_pairs: int = 2_000_000,
) -> FeatureTable:
    """Compute features at radius ``r`` for the points in ``subset`` (default all).

    Rows outside ``subset`` are NaN. ``index`` must be built over ``cloud``.
    """
    if not r > 0:
        raise InvalidRadius(f"feature radius must be > 0, got {r}")
    feats = parse_features(ids)
    n = len(cloud)
    rows = np.arange(n) if subset is None else np.unique(np.asarray(subset, dtype=np.int64))
    out = {f: np.full((n, 3) if f is Feature.NORMAL_VECTOR else n, MISSING) for f in feats}
    if len(rows) == 0:
        return FeatureTable(float(r), out)

    offsets, flat = index.radius_query_many(cloud.xyz[rows], r, Mode.BALL3D)
    if Feature.POINT_DENSITY_2D in feats:
        counts2d = index.count_many(cloud.xyz[rows], r, Mode.DISC2D) - 1
        out[Feature.POINT_DENSITY_2D][rows] = counts2d / (np.pi * r * r)

    for lo, hi in _chunks(offsets, max_pairs):
        sub_rows = rows[lo:hi]
        off = offsets[lo : hi + 1] - offsets[lo]
        nb = flat[offsets[lo] : offsets[hi]]
        vals = _chunk_features(cloud.xyz, sub_rows, off, nb, r, feats)
        for f, v in vals.items():
            out[f][sub_rows] = v
    return FeatureTable(float(r), out)


def _chunk_features(xyz, rows, off, nb, r, feats):
    m = len(rows)
    counts = np.diff(off)
    owner = np.repeat(np.arange(m), counts)
    pts = xyz[nb]
    p = xyz[rows]

    res = {}
    nn = counts - 1
    if Feature.NUM_NEIGHBORS in feats:
        res[Feature.NUM_NEIGHBORS] = nn.astype(np.float64)
    if Feature.SURFACE_DENSITY in feats:
        res[Feature.SURFACE_DENSITY] = nn / (np.pi * r * r)
    if Feature.VOLUME_DENSITY in feats:
        res[Feature.VOLUME_DENSITY] = nn / (4.0 / 3.0 * np.pi * r**3)

    if Feature.Z_RANK in feats or Feature.Z_RANGE in feats:
        # every row holds at least the feature point itself
        z = pts[:, 2]
        zmin = np.minimum.reduceat(z, off[:-1])
        zmax = np.maximum.reduceat(z, off[:-1])
        zr = zmax - zmin
        if Feature.Z_RANGE in feats:
            res[Feature.Z_RANGE] = zr
        if Feature.Z_RANK in feats:
            with np.errstate(invalid="ignore", divide="ignore"):
                rank = np.where(zr > 0, (p[:, 2] - zmin) / np.where(zr > 0, zr, 1.0), 0.5)
            res[Feature.Z_RANK] = rank

    eigen_feats = set(feats) - {
        Feature.NUM_NEIGHBORS,
        Feature.SURFACE_DENSITY,
        Feature.VOLUME_DENSITY,
        Feature.POINT_DENSITY_2D,
        Feature.Z_RANK,
        Feature.Z_RANGE,
    }
    if not eigen_feats:
        return res

    cnt = counts.astype(np.float64)
    centroid = np.column_stack([np.bincount(owner, weights=pts[:, k], minlength=m) for k in range(3)]) / cnt[:, None]
    d = pts - centroid[owner]
    cov = np.empty((m, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(owner, weights=d[:, a] * d[:, b], minlength=m) / cnt
            cov[:, a, b] = s
            cov[:, b, a] = s
    lam, vec = _eig_sorted(cov)
    normal = orient_normals(vec[:, :, 2])
    valid = counts >= 3
    l1, l2, l3 = lam[:, 0], lam[:, 1], lam[:, 2]
    total = lam.sum(axis=1)
    ok = valid & (l1 > 0)

    def ratio(num, den):
        outv = np.full(m, MISSING)
        outv[ok] = num[ok] / den[ok]
        return outv

    def masked(v):
        outv = np.full(v.shape, MISSING)
        outv[valid] = v[valid]
        return outv

    if Feature.LINEARITY in feats:
        res[Feature.LINEARITY] = ratio(l1 - l2, l1)
    if Feature.PLANARITY in feats:
        res[Feature.PLANARITY] = ratio(l2 - l3, l1)
    if Feature.SPHERICITY in feats:
        res[Feature.SPHERICITY] = ratio(l3, l1)
    if Feature.ANISOTROPY in feats:
        res[Feature.ANISOTROPY] = ratio(l1 - l3, l1)
    if Feature.SURFACE_VARIATION in feats:
        res[Feature.SURFACE_VARIATION] = ratio(l3, total)
    if Feature.OMNIVARIANCE in feats:
        res[Feature.OMNIVARIANCE] = masked(np.cbrt(l1 * l2 * l3))
    if Feature.EIGENENTROPY in feats:
        e = np.zeros_like(lam)
        e[ok] = lam[ok] / total[ok, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(e > 0, e * np.log(np.where(e > 0, e, 1.0)), 0.0)
        ent = np.full(m, MISSING)
        ent[ok] = -terms[ok].sum(axis=1)
        res[Feature.EIGENENTROPY] = ent
    if Feature.LAMBDA1 in feats:
        res[Feature.LAMBDA1] = masked(l1)
    if Feature.LAMBDA2 in feats:
        res[Feature.LAMBDA2] = masked(l2)
    if Feature.LAMBDA3 in feats:
        res[Feature.LAMBDA3] = masked(l3)
    if Feature.SUM_LAMBDA in feats:
        res[Feature.SUM_LAMBDA] = masked(total)
    if Feature.VERTICALITY in feats:
        res[Feature.VERTICALITY] = masked(1.0 - np.abs(normal[:, 2]))
    if Feature.NORMAL_VECTOR in feats:
        nv = np.full((m, 3), MISSING)
        nv[valid] = normal[valid]
        res[Feature.NORMAL_VECTOR] = nv
    if Feature.ROUGHNESS in feats:
        res[Feature.ROUGHNESS] = masked(np.abs(((p - centroid) * normal).sum(axis=1)))
    if Feature.CURVATURE in feats:
        res[Feature.CURVATURE] = masked(_quadric_curvature(pts, p, owner, vec, normal, m))
    return res


QUADRIC_RCOND = 1e-4  # relative singular-value cutoff of the quadric normal equations


def _quadric_curvature(pts, p, owner, vec, normal, m):
    """|a + c| of z' = a x'^2 + b x'y' + c y'^2 fitted around each feature point."""
    d = pts - p[owner]
    x = (d * vec[owner, :, 0]).sum(axis=1)
    y = (d * vec[owner, :, 1]).sum(axis=1)
    z = (d * normal[owner]).sum(axis=1)
    mono = (x * x, x * y, y * y)
    A = np.empty((m, 3, 3))
    b = np.empty((m, 3))
    for i in range(3):
        b[:, i] = np.bincount(owner, weights=mono[i] * z, minlength=m)
        for j in range(i, 3):
            s = np.bincount(owner, weights=mono[i] * mono[j], minlength=m)
            A[:, i, j] = s
            A[:, j, i] = s
    # barely sampled monomial directions (few or nearly collinear neighbors)
    # are truncated instead of amplified into huge curvatures
    coef = np.einsum("mij,mj->mi", np.linalg.pinv(A, rcond=QUADRIC_RCOND), b)
    return np.abs(coef[:, 0] + coef[:, 2])
