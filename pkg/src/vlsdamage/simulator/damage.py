"""Parametric damage operators on building meshes.

Each operator turns an intact building into a damaged counterpart whose
visible geometry follows one grade of the damage catalogue:

* heavy: rectangular holes through roof and facade faces,
* extreme: a contiguous part of the building removed by a cutting plane,
  plus debris prisms dropped on the ground below it,
* destruction: the building replaced by a rubble height field.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from ..classifier import DamageGrade
from ..errors import InvalidDamageParams
from .mesh import TriangleMesh, box_mesh, clip_polygon, fan

logger = logging.getLogger(__name__)

ROOF_NZ = 0.3  # |n_z| above this marks a roof face
MAX_RUBBLE_FRACTION = 0.3


@dataclass(frozen=True)
class DamageParams:
    """Ranges are inclusive ``(low, high)`` pairs sampled uniformly."""

    hole_count: Tuple[int, int] = (12, 30)
    hole_size_m: Tuple[float, float] = (0.5, 2.5)
    roof_hole_share: float = 0.5
    removed_fraction: Tuple[float, float] = (0.2, 0.6)
    debris_count: Tuple[int, int] = (3, 8)
    debris_size_m: Tuple[float, float] = (1.0, 3.0)
    debris_height_m: Tuple[float, float] = (0.3, 1.2)
    rubble_height_fraction: Tuple[float, float] = (0.15, 0.3)
    rubble_margin_m: float = 1.0
    rubble_cell_m: float = 0.5

    def __post_init__(self):
        for name in ("hole_count", "hole_size_m", "removed_fraction", "debris_count", "debris_size_m",
                     "debris_height_m", "rubble_height_fraction"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise InvalidDamageParams(f"{name}: need low <= high, got ({lo}, {hi})")
        if self.hole_count[0] < 1 or self.debris_count[0] < 0:
            raise InvalidDamageParams("hole_count must be >= 1 and debris_count >= 0")
        if self.hole_size_m[0] <= 0 or self.debris_size_m[0] <= 0 or self.debris_height_m[0] <= 0:
            raise InvalidDamageParams("sizes must be positive")
        if not 0.0 <= self.roof_hole_share <= 1.0:
            raise InvalidDamageParams("roof_hole_share must lie in [0, 1]")
        if not (0.0 < self.removed_fraction[0] and self.removed_fraction[1] < 1.0):
            raise InvalidDamageParams("removed_fraction must lie in (0, 1)")
        lo, hi = self.rubble_height_fraction
        if lo <= 0 or hi > MAX_RUBBLE_FRACTION:
            raise InvalidDamageParams(f"rubble_height_fraction must lie in (0, {MAX_RUBBLE_FRACTION}]")
        if self.rubble_margin_m < 0 or self.rubble_cell_m <= 0:
            raise InvalidDamageParams("rubble margin must be >= 0 and cell size > 0")

    @classmethod
    def from_dict(cls, data: dict) -> "DamageParams":
        try:
            return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
        except TypeError as exc:
            raise InvalidDamageParams(str(exc)) from exc

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _uniform(rng, pair):
    return float(rng.uniform(pair[0], pair[1]))


def _integer(rng, pair):
    return int(rng.integers(pair[0], pair[1] + 1))


def _sample_on_triangles(rng, soup, areas, mask):
    idx = np.flatnonzero(mask)
    w = areas[idx] / areas[idx].sum()
    t = idx[rng.choice(len(idx), p=w)]
    a, b = rng.random(2)
    if a + b > 1:
        a, b = 1 - a, 1 - b
    tri = soup[t]
    return t, tri[0] + a * (tri[1] - tri[0]) + b * (tri[2] - tri[0])


def _face_frame(normal):
    up = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(up, normal)
    if np.linalg.norm(e1) < 1e-9:
        e1 = np.array([1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2 / np.linalg.norm(e2)


def _minus_rect(tri, center, e1, e2, half_w, half_h):
    """Triangle minus a rectangle lying in its plane, as a list of triangles."""
    c1, c2 = center @ e1, center @ e2
    pieces = [
        clip_polygon(tri, e1, c1 - half_w),
        clip_polygon(tri, -e1, -(c1 + half_w)),
    ]
    band = clip_polygon(clip_polygon(tri, -e1, -(c1 - half_w)), e1, c1 + half_w)
    pieces.append(clip_polygon(band, e2, c2 - half_h))
    pieces.append(clip_polygon(band, -e2, -(c2 + half_h)))
    out = []
    for p in pieces:
        if len(p) >= 3:
            out += fan(p)
    return out


def cut_hole(mesh: TriangleMesh, center, normal, half_w, half_h, plane_tol=0.05, angle_tol_deg=5.0) -> TriangleMesh:
    """Remove a rectangle from every face coplanar with ``(center, normal)``."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    center = np.asarray(center, dtype=np.float64)
    e1, e2 = _face_frame(normal)
    soup = mesh.soup()
    n = mesh.normals()
    coplanar = (np.abs(n @ normal) > np.cos(np.deg2rad(angle_tol_deg))) & (
        np.abs((soup.mean(axis=1) - center) @ normal) < plane_tol
    )
    u = (soup - center) @ e1
    v = (soup - center) @ e2
    overlap = (u.min(axis=1) < half_w) & (u.max(axis=1) > -half_w) & (v.min(axis=1) < half_h) & (v.max(axis=1) > -half_h)
    hit = coplanar & overlap
    if not hit.any():
        return mesh
    new = []
    for tri in soup[hit]:
        new += _minus_rect(tri, center, e1, e2, half_w, half_h)
    keep = soup[~hit]
    parts = [keep] + ([np.array(new)] if new else [])
    return TriangleMesh.from_soup(np.concatenate(parts))


def _heavy(mesh, p: DamageParams, rng) -> TriangleMesh:
    out = mesh
    for _ in range(_integer(rng, p.hole_count)):
        soup = out.soup()
        areas = out.areas()
        nz = np.abs(out.normals()[:, 2])
        roof, facade = nz > ROOF_NZ, nz <= ROOF_NZ
        on_roof = rng.random() < p.roof_hole_share
        mask = roof if (on_roof and roof.any()) or not facade.any() else facade
        if not mask.any():
            break
        t, c = _sample_on_triangles(rng, soup, areas, mask)
        w, h = _uniform(rng, p.hole_size_m), _uniform(rng, p.hole_size_m)
        out = cut_hole(out, c, out.normals()[t], 0.5 * w, 0.5 * h)
    return out


def clip_mesh(mesh: TriangleMesh, normal, offset) -> TriangleMesh:
    """Keep the part of the mesh with ``p.normal <= offset``."""
    normal = np.asarray(normal, dtype=np.float64)
    soup = mesh.soup()
    d = soup @ normal - offset
    inside = (d <= 0).all(axis=1)
    straddle = ~inside & (d <= 0).any(axis=1)
    tris = [soup[inside]]
    extra = []
    for tri in soup[straddle]:
        extra += fan(clip_polygon(tri, normal, offset))
    if extra:
        tris.append(np.array(extra))
    return TriangleMesh.from_soup(np.concatenate(tris))


def _kept_area(soup, normal, offset) -> float:
    d = soup @ normal - offset
    inside = (d <= 0).all(axis=1)
    straddle = ~inside & (d <= 0).any(axis=1)
    a = soup[inside]
    area = 0.5 * np.linalg.norm(np.cross(a[:, 1] - a[:, 0], a[:, 2] - a[:, 0]), axis=1).sum()
    for tri in soup[straddle]:
        poly = clip_polygon(tri, normal, offset)
        for t in fan(poly):
            area += 0.5 * np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0]))
    return float(area)


def _cut_direction(rng):
    kind = rng.choice(["story", "facade", "corner"])
    phi = rng.uniform(0, 2 * np.pi)
    horiz = np.array([np.cos(phi), np.sin(phi), 0.0])
    if kind == "story":
        n = np.array([0.0, 0.0, 1.0]) + 0.15 * horiz
    elif kind == "facade":
        n = horiz
    else:
        n = horiz + np.array([0.0, 0.0, rng.uniform(0.5, 1.5)])
    return n / np.linalg.norm(n), str(kind)


def _debris(rng, p: DamageParams, removed_xy, base_z) -> List[TriangleMesh]:
    out = []
    for _ in range(_integer(rng, p.debris_count)):
        cx, cy = removed_xy[rng.integers(len(removed_xy))] + rng.uniform(-1.0, 1.0, 2)
        sx, sy = _uniform(rng, p.debris_size_m), _uniform(rng, p.debris_size_m)
        h = _uniform(rng, p.debris_height_m)
        box = box_mesh(-sx / 2, -sy / 2, sx / 2, sy / 2, h, max_edge=sx + sy)
        out.append(box.transformed(yaw_deg=rng.uniform(0, 180), offset=(cx, cy, base_z)))
    return out


def _extreme(mesh, p: DamageParams, rng) -> TriangleMesh:
    target = _uniform(rng, p.removed_fraction)
    normal, kind = _cut_direction(rng)
    soup = mesh.soup()
    total = mesh.area()
    proj = soup.reshape(-1, 3) @ normal
    lo, hi = float(proj.min()), float(proj.max())
    # kept area grows monotonically with the offset
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _kept_area(soup, normal, mid) < (1.0 - target) * total:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-4:
            break
    offset = 0.5 * (lo + hi)
    kept = clip_mesh(mesh, normal, offset)
    removed = clip_mesh(mesh, -normal, -offset)
    logger.debug("extreme cut %s removes %.1f%% of area", kind, 100 * (1 - kept.area() / total))
    base_z = float(mesh.vertices[:, 2].min())
    xy = removed.soup().mean(axis=1)[:, :2] if len(removed) else mesh.vertices[:, :2]
    return TriangleMesh.merge([kept] + _debris(rng, p, xy, base_z)).cleaned()


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def _destruction(mesh, p: DamageParams, rng) -> TriangleMesh:
    lo, hi = mesh.bounds()
    base_z = float(lo[2])
    height = float(hi[2] - lo[2])
    peak = _uniform(rng, p.rubble_height_fraction) * height
    m = p.rubble_margin_m
    x0, y0, x1, y1 = lo[0] - m, lo[1] - m, hi[0] + m, hi[1] + m
    nx = max(2, int(np.ceil((x1 - x0) / p.rubble_cell_m)) + 1)
    ny = max(2, int(np.ceil((y1 - y0) / p.rubble_cell_m)) + 1)
    gx, gy = np.meshgrid(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny), indexing="ij")
    # falloff: full height inside the footprint, zero at the outer margin
    dx = np.minimum(gx - x0, x1 - gx)
    dy = np.minimum(gy - y0, y1 - gy)
    ramp = max(m, 0.25 * min(hi[0] - lo[0], hi[1] - lo[1]))
    w = _smoothstep(np.minimum(dx, dy) / ramp)
    noise = np.full(gx.shape, 0.35)
    for _ in range(int(rng.integers(4, 9))):
        cx, cy = rng.uniform(x0, x1), rng.uniform(y0, y1)
        s = rng.uniform(1.0, 4.0)
        noise += rng.uniform(0.2, 0.65) * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2 * s * s))
    noise += rng.uniform(0.0, 0.15, gx.shape)
    z = peak * w * np.minimum(noise, 1.0)
    z = np.minimum(z, peak)
    verts = np.column_stack([gx.ravel(), gy.ravel(), base_z + z.ravel()])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    a = (i * ny + j).ravel()
    b = ((i + 1) * ny + j).ravel()
    c = ((i + 1) * ny + j + 1).ravel()
    d = (i * ny + j + 1).ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(verts, tris).cleaned()


def apply_damage(mesh: TriangleMesh, grade, params: DamageParams = None, seed: int = 0) -> TriangleMesh:
    """Return the damaged counterpart of ``mesh`` for ``grade``.

    The building base is the lowest vertex of the mesh. Output is
    deterministic in ``seed``; no damage returns an identical copy.
    """
    grade = DamageGrade.parse(grade)
    params = params or DamageParams()
    if not isinstance(params, DamageParams):
        params = DamageParams.from_dict(dict(params))
    if grade == DamageGrade.NO_DAMAGE or len(mesh) == 0:
        return mesh.copy()
    rng = np.random.default_rng(seed)
    if grade == DamageGrade.HEAVY:
        return _heavy(mesh, params, rng)
    if grade == DamageGrade.EXTREME:
        return _extreme(mesh, params, rng)
    return _destruction(mesh, params, rng)
