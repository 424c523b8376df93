"""Triangle meshes, OBJ I/O and procedural building primitives."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..errors import ParseError

AREA_EPS = 1e-10


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (n, 3) meters
    triangles: np.ndarray  # (m, 3) vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))

    @classmethod
    def from_soup(cls, tris: np.ndarray) -> "TriangleMesh":
        """Build from an (m, 3, 3) triangle soup, merging exactly equal vertices."""
        tris = np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3)
        if len(tris) == 0:
            return cls.empty()
        flat = tris.reshape(-1, 3)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        return cls(uniq, inv.reshape(-1, 3)).cleaned()

    def __len__(self):
        return len(self.triangles)

    def soup(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        t = self.soup()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def normals(self) -> np.ndarray:
        t = self.soup()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(ln > 0, ln, 1.0)

    def area(self) -> float:
        return float(self.areas().sum())

    def cleaned(self) -> "TriangleMesh":
        """Drop zero-area triangles and unreferenced vertices."""
        if len(self.triangles) == 0:
            return TriangleMesh.empty()
        keep = self.areas() > AREA_EPS
        tris = self.triangles[keep]
        used = np.unique(tris)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(self.vertices[used], remap[tris])

    def bounds(self):
        if len(self.vertices) == 0:
            return np.zeros(3), np.zeros(3)
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, scale=(1.0, 1.0, 1.0), yaw_deg: float = 0.0, offset=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        a = np.deg2rad(yaw_deg)
        R = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
        v = (self.vertices * np.asarray(scale, dtype=np.float64)) @ R.T + np.asarray(offset, dtype=np.float64)
        return TriangleMesh(v, self.triangles.copy())

    def copy(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices.copy(), self.triangles.copy())

    def equals(self, other: "TriangleMesh") -> bool:
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(self.triangles, other.triangles)

    @staticmethod
    def merge(meshes: Sequence["TriangleMesh"]) -> "TriangleMesh":
        verts, tris, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + off)
            off += len(m.vertices)
        if not verts:
            return TriangleMesh.empty()
        return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def write_obj(path, mesh: TriangleMesh) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    path.write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as exc:
            raise ParseError(f"{path}:{ln}: {exc}") from exc
    try:
        return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


# --- polygon helpers ---------------------------------------------------------


def clip_polygon(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Sutherland-Hodgman: keep the part of a convex polygon with ``p.n <= offset``."""
    if len(poly) == 0:
        return poly
    out = []
    s = poly[-1]
    ds = s @ normal - offset
    for e in poly:
        de = e @ normal - offset
        if de <= 0:
            if ds > 0:
                out.append(s + (e - s) * (ds / (ds - de)))
            out.append(e)
        elif ds <= 0:
            out.append(s + (e - s) * (ds / (ds - de)))
        s, ds = e, de
    return np.array(out).reshape(-1, poly.shape[1])


def fan(poly: np.ndarray) -> List[np.ndarray]:
    return [np.stack([poly[0], poly[k], poly[k + 1]]) for k in range(1, len(poly) - 1)]


def quad(a, b, c, d) -> List[np.ndarray]:
    a, b, c, d = (np.asarray(p, dtype=np.float64) for p in (a, b, c, d))
    return [np.stack([a, b, c]), np.stack([a, c, d])]


def subdivide_quad(a, b, c, d, max_edge: float) -> List[np.ndarray]:
    """Split a planar quad into a grid of quads no longer than ``max_edge``."""
    a, b, c, d = (np.asarray(p, dtype=np.float64) for p in (a, b, c, d))
    nu = max(1, int(np.ceil(max(np.linalg.norm(b - a), np.linalg.norm(c - d)) / max_edge)))
    nv = max(1, int(np.ceil(max(np.linalg.norm(d - a), np.linalg.norm(c - b)) / max_edge)))
    out = []
    for i in range(nu):
        for j in range(nv):
            def P(s, t):
                return (1 - s) * ((1 - t) * a + t * d) + s * ((1 - t) * b + t * c)

            s0, s1, t0, t1 = i / nu, (i + 1) / nu, j / nv, (j + 1) / nv
            out += quad(P(s0, t0), P(s1, t0), P(s1, t1), P(s0, t1))
    return out


# --- building primitives -------------------------------------------------------


@dataclass
class Block:
    """Axis-aligned box wing of a building with an optional pitched roof."""

    x0: float
    y0: float
    x1: float
    y1: float
    height: float
    roof: str = "flat"  # flat | gable | hip
    roof_height: float = 0.0

    @property
    def top(self) -> float:
        return self.height + (self.roof_height if self.roof != "flat" else 0.0)


def block_mesh(b: Block, max_edge: float = 4.0) -> List[np.ndarray]:
    """Walls and roof of one block as a triangle soup (no floor)."""
    h = b.height
    c = [(b.x0, b.y0), (b.x1, b.y0), (b.x1, b.y1), (b.x0, b.y1)]
    tris = []
    for (xa, ya), (xb, yb) in zip(c, c[1:] + c[:1]):
        tris += subdivide_quad((xa, ya, 0.0), (xb, yb, 0.0), (xb, yb, h), (xa, ya, h), max_edge)
    rh = b.roof_height
    if b.roof == "flat" or rh <= 0:
        tris += subdivide_quad((b.x0, b.y0, h), (b.x1, b.y0, h), (b.x1, b.y1, h), (b.x0, b.y1, h), max_edge)
        return tris
    along_x = (b.x1 - b.x0) >= (b.y1 - b.y0)
    if b.roof == "gable":
        if along_x:
            ym = 0.5 * (b.y0 + b.y1)
            tris += subdivide_quad((b.x0, b.y0, h), (b.x1, b.y0, h), (b.x1, ym, h + rh), (b.x0, ym, h + rh), max_edge)
            tris += subdivide_quad((b.x0, b.y1, h), (b.x0, ym, h + rh), (b.x1, ym, h + rh), (b.x1, b.y1, h), max_edge)
            tris.append(np.array([(b.x0, b.y0, h), (b.x0, ym, h + rh), (b.x0, b.y1, h)]))
            tris.append(np.array([(b.x1, b.y0, h), (b.x1, b.y1, h), (b.x1, ym, h + rh)]))
        else:
            xm = 0.5 * (b.x0 + b.x1)
            tris += subdivide_quad((b.x0, b.y0, h), (xm, b.y0, h + rh), (xm, b.y1, h + rh), (b.x0, b.y1, h), max_edge)
            tris += subdivide_quad((b.x1, b.y0, h), (b.x1, b.y1, h), (xm, b.y1, h + rh), (xm, b.y0, h + rh), max_edge)
            tris.append(np.array([(b.x0, b.y0, h), (b.x1, b.y0, h), (xm, b.y0, h + rh)]))
            tris.append(np.array([(b.x0, b.y1, h), (xm, b.y1, h + rh), (b.x1, b.y1, h)]))
        return tris
    if b.roof == "hip":
        w = min(b.x1 - b.x0, b.y1 - b.y0)
        inset = 0.5 * w
        if along_x:
            ym = 0.5 * (b.y0 + b.y1)
            r0, r1 = (b.x0 + inset, ym, h + rh), (b.x1 - inset, ym, h + rh)
            tris += quad((b.x0, b.y0, h), (b.x1, b.y0, h), r1, r0)
            tris += quad((b.x1, b.y1, h), (b.x0, b.y1, h), r0, r1)
            tris.append(np.array([(b.x0, b.y1, h), (b.x0, b.y0, h), r0]))
            tris.append(np.array([(b.x1, b.y0, h), (b.x1, b.y1, h), r1]))
        else:
            xm = 0.5 * (b.x0 + b.x1)
            r0, r1 = (xm, b.y0 + inset, h + rh), (xm, b.y1 - inset, h + rh)
            tris += quad((b.x1, b.y0, h), (b.x1, b.y1, h), r1, r0)
            tris += quad((b.x0, b.y1, h), (b.x0, b.y0, h), r0, r1)
            tris.append(np.array([(b.x0, b.y0, h), (b.x1, b.y0, h), r0]))
            tris.append(np.array([(b.x1, b.y1, h), (b.x0, b.y1, h), r1]))
        return tris
    raise ValueError(f"unknown roof type {b.roof!r}")


def building_mesh(blocks: Sequence[Block], max_edge: float = 4.0) -> TriangleMesh:
    tris = []
    for b in blocks:
        tris += block_mesh(b, max_edge)
    return TriangleMesh.from_soup(np.array(tris))


def box_mesh(x0, y0, x1, y1, height, max_edge: float = 4.0) -> TriangleMesh:
    return building_mesh([Block(x0, y0, x1, y1, height, "flat")], max_edge)


def plane_mesh(x0, y0, x1, y1, z=0.0) -> TriangleMesh:
    return TriangleMesh.from_soup(np.array(quad((x0, y0, z), (x1, y0, z), (x1, y1, z), (x0, y1, z))))
