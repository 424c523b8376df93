"""Virtual UAV laser scanning of triangle scenes.

The platform flies straight strips at constant speed and altitude. Each
scan line sweeps the field of view across track in a zig-zag pattern,
so every pulse is fully determined by (strip, line, step). Instead of
testing every pulse against every triangle, each triangle is mapped to
the small block of (line, step) indices whose rays can reach it and only
those candidate pairs go through the exact intersection test.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri

from ..errors import InvalidOverlap
from ..pointcloud import Epoch, PointCloud
from .scene import Scene

logger = logging.getLogger(__name__)

MAX_PAIRS = 3_000_000
GROUND_ID = 0
GROUND_GRADE = -1


@dataclass(frozen=True)
class ScannerConfig:
    scan_rate_hz: float = 89.0
    pulse_rate_hz: float = 300_000.0
    strip_overlap_percent: float = 60.0
    fov_deg: float = 120.0
    altitude_m: float = 100.0
    speed_mps: float = 8.0
    range_noise_sigma_m: float = 0.02

    def __post_init__(self):
        for name in ("scan_rate_hz", "pulse_rate_hz", "altitude_m", "speed_mps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.range_noise_sigma_m < 0:
            raise ValueError("range_noise_sigma_m must be >= 0")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov_deg must lie in (0, 180)")
        if self.pulse_rate_hz < self.scan_rate_hz:
            raise ValueError("pulse_rate_hz must be at least scan_rate_hz")
        if not 0.0 <= self.strip_overlap_percent <= 95.0:
            raise InvalidOverlap(f"strip overlap {self.strip_overlap_percent}% outside [0, 95]")

    @property
    def swath_width(self) -> float:
        return 2.0 * self.altitude_m * math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def strip_spacing(self) -> float:
        return self.swath_width * (1.0 - self.strip_overlap_percent / 100.0)

    @property
    def line_spacing(self) -> float:
        return self.speed_mps / self.scan_rate_hz

    @property
    def pulses_per_line(self) -> int:
        return int(self.pulse_rate_hz // self.scan_rate_hz)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FlightStrip:
    index: int
    start: Tuple[float, float, float]
    end: Tuple[float, float, float]
    heading_deg: float

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def heading(self) -> np.ndarray:
        a = math.radians(self.heading_deg)
        return np.array([math.cos(a), math.sin(a), 0.0])

    @property
    def left(self) -> np.ndarray:
        h = self.heading
        return np.array([-h[1], h[0], 0.0])


def plan_strips(extent, cfg: ScannerConfig, lead_in_m: float = 1.0, overlap_percent: Optional[float] = None) -> List[FlightStrip]:
    """Parallel east-west strips covering ``extent = (x0, y0, x1, y1)``.

    Strips alternate direction and are centred on the extent across track.
    """
    overlap = cfg.strip_overlap_percent if overlap_percent is None else overlap_percent
    if not 0.0 <= overlap < 100.0:
        raise InvalidOverlap(f"strip overlap {overlap}% must lie in [0, 100)")
    x0, y0, x1, y1 = (float(v) for v in extent)
    swath = cfg.swath_width
    spacing = swath * (1.0 - overlap / 100.0)
    width = y1 - y0
    n = 1 if width <= swath else int(math.ceil((width - swath) / spacing)) + 1
    first = 0.5 * (y0 + y1) - 0.5 * (n - 1) * spacing
    strips = []
    z = cfg.altitude_m
    for i in range(n):
        y = first + i * spacing
        a, b = (x0 - lead_in_m, x1 + lead_in_m)
        if i % 2:
            strips.append(FlightStrip(i, (b, y, z), (a, y, z), 180.0))
        else:
            strips.append(FlightStrip(i, (a, y, z), (b, y, z), 0.0))
    return strips


# --- ray-triangle intersection -------------------------------------------------


def intersect_many(origins, directions, v0, v1, v2):
    """Watertight ray-triangle test (Woop, Benthin, Wald) for aligned arrays.

    Returns ``t`` with NaN for misses. Back faces count as hits; only
    ``t >= 0`` is accepted. Edges shared by two triangles are hit exactly
    once or twice but never missed.
    """
    O = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    D = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    m = len(O)
    rows = np.arange(m)
    kz = np.argmax(np.abs(D), axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    neg = D[rows, kz] < 0
    kx, ky = np.where(neg, ky, kx), np.where(neg, kx, ky)
    dz = D[rows, kz]
    sx = D[rows, kx] / dz
    sy = D[rows, ky] / dz
    sz = 1.0 / dz

    def project(v):
        p = np.asarray(v, dtype=np.float64).reshape(-1, 3) - O
        pz = p[rows, kz]
        return p[rows, kx] - sx * pz, p[rows, ky] - sy * pz, sz * pz

    ax, ay, az = project(v0)
    bx, by, bz = project(v1)
    cx, cy, cz = project(v2)
    U = cx * by - cy * bx
    V = ax * cy - ay * cx
    W = bx * ay - by * ax
    inside = ~(((U < 0) | (V < 0) | (W < 0)) & ((U > 0) | (V > 0) | (W > 0)))
    det = U + V + W
    ok = inside & (det != 0)
    T = U * az + V * bz + W * cz
    t = np.full(m, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = T / det
    ok &= tt >= 0
    t[ok] = tt[ok]
    return t


def ray_triangle_intersect(origin, direction, triangle):
    """Single-ray convenience wrapper; returns ``(t, point)`` or ``None``."""
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    t = intersect_many(origin, direction, tri[0], tri[1], tri[2])[0]
    if np.isnan(t):
        return None
    o = np.asarray(origin, dtype=np.float64)
    return float(t), o + t * np.asarray(direction, dtype=np.float64)


# --- scanning -------------------------------------------------------------------


@dataclass
class _Geometry:
    """Triangle soup with per-triangle labels."""

    soup: np.ndarray  # (m, 3, 3)
    owner: np.ndarray  # building id owning the triangle (pads included)
    label_id: np.ndarray  # building id written to points (0 for ground)
    label_grade: np.ndarray

    @staticmethod
    def concat(parts: Sequence["_Geometry"]) -> "_Geometry":
        parts = [p for p in parts if len(p.soup)]
        if not parts:
            e = np.empty(0, dtype=np.int64)
            return _Geometry(np.empty((0, 3, 3)), e, e, e)
        return _Geometry(
            np.concatenate([p.soup for p in parts]),
            np.concatenate([p.owner for p in parts]),
            np.concatenate([p.label_id for p in parts]),
            np.concatenate([p.label_grade for p in parts]),
        )


def _building_geometry(b) -> _Geometry:
    soup = b.mesh.soup()
    n = len(soup)
    return _Geometry(soup, np.full(n, b.id), np.full(n, b.id), np.full(n, int(b.grade)))


def _pad_geometry(owner: int, mesh) -> _Geometry:
    soup = mesh.soup()
    n = len(soup)
    return _Geometry(soup, np.full(n, owner), np.full(n, GROUND_ID), np.full(n, GROUND_GRADE))


class _StripRaster:
    """Maps triangles to candidate (line, step) pulse indices of one strip."""

    def __init__(self, strip: FlightStrip, cfg: ScannerConfig, t0: float):
        self.strip = strip
        self.cfg = cfg
        self.t0 = t0
        self.origin = np.asarray(strip.start, dtype=np.float64)
        self.h = strip.heading
        self.a = strip.left
        self.n_steps = cfg.pulses_per_line
        self.n_lines = int(math.floor((strip.length / cfg.speed_mps - t0) * cfg.scan_rate_hz)) + 1
        self.half = math.radians(cfg.fov_deg) / 2.0
        self.dtheta = 2.0 * self.half / self.n_steps

    def windows(self, soup):
        """Per-triangle bounds: line range, even/odd step range, u range."""
        cfg = self.cfg
        rel = soup - self.origin[None, None, :]
        u = rel @ self.h
        v = rel @ self.a
        w = cfg.altitude_m - soup[..., 2]
        valid = (w > 0).all(axis=1)
        phi = np.arctan2(v, np.where(w > 0, w, 1.0))
        umin, umax = u.min(axis=1), u.max(axis=1)
        pmin, pmax = phi.min(axis=1), phi.max(axis=1)
        line_dur = (self.n_steps - 1) / cfg.pulse_rate_hz
        l_lo = np.floor((umin / cfg.speed_mps - self.t0 - line_dur) * cfg.scan_rate_hz) - 1
        l_hi = np.floor((umax / cfg.speed_mps - self.t0) * cfg.scan_rate_hz) + 1
        l_lo = np.clip(l_lo, 0, self.n_lines - 1).astype(np.int64)
        l_hi = np.clip(l_hi, -1, self.n_lines - 1).astype(np.int64)
        ke_lo = np.ceil((pmin + self.half) / self.dtheta - 0.5) - 1
        ke_hi = np.floor((pmax + self.half) / self.dtheta - 0.5) + 1
        ko_lo = np.ceil((self.half - pmax) / self.dtheta - 0.5) - 1
        ko_hi = np.floor((self.half - pmin) / self.dtheta - 0.5) + 1
        ks = [np.clip(k, 0, self.n_steps - 1).astype(np.int64) for k in (ke_lo, ke_hi, ko_lo, ko_hi)]
        l_hi = np.where(valid, l_hi, l_lo - 1)
        return l_lo, l_hi, ks, umin, umax

    def pairs(self, tri_idx, l_lo, l_hi, ks, umin, umax, clip=None):
        """Expand windows into candidate (triangle, line, step) triples."""
        cfg = self.cfg
        ke_lo, ke_hi, ko_lo, ko_hi = ks
        if clip is not None:
            (L0, L1), (E0, E1), (O0, O1) = clip
            l_lo, l_hi = np.maximum(l_lo, L0), np.minimum(l_hi, L1)
            ke_lo, ke_hi = np.maximum(ke_lo, E0), np.minimum(ke_hi, E1)
            ko_lo, ko_hi = np.maximum(ko_lo, O0), np.minimum(ko_hi, O1)
        nl = np.maximum(l_hi - l_lo + 1, 0)
        if nl.sum() == 0:
            e = np.empty(0, dtype=np.int64)
            return e, e, e
        rep = np.repeat(np.arange(len(tri_idx)), nl)
        start = np.repeat(np.cumsum(nl) - nl, nl)
        line = l_lo[rep] + (np.arange(len(rep)) - start)
        odd = (line % 2).astype(bool)
        k_lo = np.where(odd, ko_lo[rep], ke_lo[rep])
        k_hi = np.where(odd, ko_hi[rep], ke_hi[rep])
        # the ray plane moves along track during a line; restrict steps by u
        base = umin[rep] / cfg.speed_mps - self.t0 - line / cfg.scan_rate_hz
        top = umax[rep] / cfg.speed_mps - self.t0 - line / cfg.scan_rate_hz
        k_lo = np.maximum(k_lo, np.ceil(base * cfg.pulse_rate_hz) - 1).astype(np.int64)
        k_hi = np.minimum(k_hi, np.floor(top * cfg.pulse_rate_hz) + 1).astype(np.int64)
        nk = np.maximum(k_hi - k_lo + 1, 0)
        rep2 = np.repeat(np.arange(len(rep)), nk)
        start2 = np.repeat(np.cumsum(nk) - nk, nk)
        step = k_lo[rep2] + (np.arange(len(rep2)) - start2)
        return tri_idx[rep[rep2]], line[rep2], step

    def rays(self, line, step):
        cfg = self.cfg
        t = self.t0 + line / cfg.scan_rate_hz + step / cfg.pulse_rate_hz
        odd = (line % 2).astype(bool)
        theta = np.where(odd, self.half - (step + 0.5) * self.dtheta, -self.half + (step + 0.5) * self.dtheta)
        origin = self.origin[None, :] + (cfg.speed_mps * t)[:, None] * self.h[None, :]
        origin[:, 2] = cfg.altitude_m
        d = np.sin(theta)[:, None] * self.a[None, :]
        d[:, 2] = -np.cos(theta)
        return origin, d, t


def _strip_streams(seed: int, strip_index: int):
    phase_ss, noise_ss = np.random.SeedSequence([seed, strip_index]).spawn(2)
    return np.random.default_rng(phase_ss), np.random.PCG64(noise_ss)


def _pulse_noise(bitgen: np.random.PCG64, line, step, n_steps, sigma):
    """Standard-normal draw at the pulse's fixed position in the strip stream."""
    if sigma == 0 or len(line) == 0:
        return np.zeros(len(line))
    out = np.empty(len(line))
    state = bitgen.state
    gen = np.random.Generator(bitgen)
    order = np.argsort(line, kind="stable")
    ls = line[order]
    bounds = np.flatnonzero(np.diff(ls)) + 1
    for seg in np.split(order, bounds):
        lid = int(line[seg[0]])
        k0, k1 = int(step[seg].min()), int(step[seg].max())
        bitgen.state = state
        bitgen.advance(lid * n_steps + k0)
        u = gen.random(k1 - k0 + 1)
        out[seg] = u[step[seg] - k0]
    bitgen.state = state
    u = np.clip(out, 1e-16, 1 - 1e-16)
    return sigma * ndtri(u)


def _scan_strip(geo: _Geometry, strip: FlightStrip, cfg: ScannerConfig, seed: int, targets, t_offset: float):
    phase_rng, noise_bg = _strip_streams(seed, strip.index)
    t0 = float(phase_rng.uniform(0.0, 1.0 / cfg.scan_rate_hz))
    r = _StripRaster(strip, cfg, t0)
    l_lo, l_hi, ks, umin, umax = r.windows(geo.soup)
    all_idx = np.arange(len(geo.soup))

    clip = None
    if targets is not None:
        is_t = np.isin(geo.owner, list(targets))
        tl = is_t & (l_hi >= l_lo)
        if not tl.any():
            return None
        clip = (
            (int(l_lo[tl].min()), int(l_hi[tl].max())),
            (int(ks[0][tl].min()), int(ks[1][tl].max())),
            (int(ks[2][tl].min()), int(ks[3][tl].max())),
        )

    hits_ray, hits_t, hits_tri = [], [], []
    nl = np.maximum(l_hi - l_lo + 1, 0)
    est = nl * np.minimum(np.maximum(ks[1] - ks[0], ks[3] - ks[2]) + 1,
                          (umax - umin) / cfg.speed_mps * cfg.pulse_rate_hz + 3)
    for sl in _chunks(est, MAX_PAIRS):
        tri, line, step = r.pairs(all_idx[sl], l_lo[sl], l_hi[sl], [k[sl] for k in ks], umin[sl], umax[sl], clip)
        if len(tri) == 0:
            continue
        o, d, _ = r.rays(line, step)
        s = geo.soup[tri]
        t = intersect_many(o, d, s[:, 0], s[:, 1], s[:, 2])
        ok = ~np.isnan(t)
        hits_ray.append(line[ok] * r.n_steps + step[ok])
        hits_t.append(t[ok])
        hits_tri.append(tri[ok])
    if not hits_ray:
        return None
    ray = np.concatenate(hits_ray)
    t = np.concatenate(hits_t)
    tri = np.concatenate(hits_tri)
    # first return per pulse; equal ranges resolve to the lower triangle index
    order = np.lexsort((tri, t, ray))
    ray, t, tri = ray[order], t[order], tri[order]
    first = np.ones(len(ray), dtype=bool)
    first[1:] = ray[1:] != ray[:-1]
    ray, t, tri = ray[first], t[first], tri[first]
    if targets is not None:
        keep = np.isin(geo.owner[tri], list(targets))
        ray, t, tri = ray[keep], t[keep], tri[keep]
    line, step = ray // r.n_steps, ray % r.n_steps
    o, d, tp = r.rays(line, step)
    rng_t = t + _pulse_noise(noise_bg, line, step, r.n_steps, cfg.range_noise_sigma_m)
    xyz = o + rng_t[:, None] * d
    return xyz, geo.label_id[tri], geo.label_grade[tri], tp + t_offset, np.full(len(t), strip.index), geo.owner[tri]


def _chunks(cost, limit):
    """Consecutive slices whose summed cost stays near ``limit``."""
    cum = np.cumsum(cost)
    lo = 0
    while lo < len(cost):
        base = cum[lo - 1] if lo else 0.0
        hi = int(np.searchsorted(cum, base + limit, side="right"))
        hi = max(hi, lo + 1)
        yield slice(lo, hi)
        lo = hi


def _scene_geometry(scene: Scene, targets) -> _Geometry:
    parts = []
    pads = dict(scene.ground_meshes()) if scene.ground == "pads" else {}
    for b in scene.buildings:
        parts.append(_building_geometry(b))
        if b.id in pads and (targets is None or b.id in targets):
            parts.append(_pad_geometry(b.id, pads[b.id]))
    if scene.ground == "plane":
        for owner, mesh in scene.ground_meshes():
            parts.append(_pad_geometry(owner, mesh))
    return _Geometry.concat(parts)


def _nearby(scene: Scene, targets, fov_deg: float):
    """Buildings that can occlude any target from some scan angle."""
    reach = math.tan(math.radians(fov_deg) / 2.0)
    boxes = {b.id: (b.mesh.bounds(), b.pad) for b in scene.buildings}
    tb = []
    for tid in targets:
        (lo, hi), pad = boxes[tid]
        if pad is not None:
            tb.append((min(lo[0], pad[0]), min(lo[1], pad[1]), max(hi[0], pad[2]), max(hi[1], pad[3])))
        else:
            tb.append((lo[0], lo[1], hi[0], hi[1]))
    tb = np.array(tb)
    keep = []
    for b in scene.buildings:
        (lo, hi), _ = boxes[b.id]
        if b.id in targets:
            keep.append(b)
            continue
        gap_x = np.maximum(0, np.maximum(tb[:, 0] - hi[0], lo[0] - tb[:, 2]))
        gap_y = np.maximum(0, np.maximum(tb[:, 1] - hi[1], lo[1] - tb[:, 3]))
        if np.any(np.hypot(gap_x, gap_y) <= max(hi[2], 0.0) * reach + 1e-6):
            keep.append(b)
    return keep


def simulate_scan(
    scene: Scene,
    strips: Sequence[FlightStrip],
    cfg: ScannerConfig,
    seed: int = 0,
    targets: Optional[Iterable[int]] = None,
    epoch=Epoch.PRE,
) -> PointCloud:
    """First-return point cloud of ``scene`` along ``strips``.

    With ``targets``, only points on those buildings and their ground pads
    are returned; every other building within occlusion reach still blocks
    rays. Pulse timing and noise depend only on ``(seed, strip, line, step)``,
    so a target's points are identical whether scanned alone or with the
    whole scene. Attributes: ``gps_time`` (s), ``strip`` and ``tile`` (the
    building whose mesh or ground pad was hit; 0 for a shared ground plane).
    """
    if targets is not None:
        targets = set(int(t) for t in targets)
        sub = Scene(_nearby(scene, targets, cfg.fov_deg), extent=scene.extent, ground=scene.ground)
        geo = _scene_geometry(sub, targets)
    else:
        geo = _scene_geometry(scene, None)
    empty = PointCloud(np.empty((0, 3)), {"gps_time": np.empty(0), "strip": np.empty(0), "tile": np.empty(0)},
                       np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), epoch)
    if len(geo.soup) == 0:
        return empty
    chunks = []
    t_offset = 0.0
    for strip in sorted(strips, key=lambda s: s.index):
        res = _scan_strip(geo, strip, cfg, seed, targets, t_offset)
        t_offset += strip.length / cfg.speed_mps
        if res is not None:
            chunks.append(res)
    if not chunks:
        return empty
    xyz, bid, grade, gps, sidx, tile = (np.concatenate(c) for c in zip(*chunks))
    order = np.argsort(gps, kind="stable")
    attrs = {"gps_time": gps[order], "strip": sidx[order].astype(np.float64), "tile": tile[order].astype(np.float64)}
    return PointCloud(xyz[order], attrs,
                      bid[order], grade[order], epoch)
