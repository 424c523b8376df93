"""ASCII PLY reader/writer for point clouds with per-vertex properties.

Dialect: one ``vertex`` element with ``x y z`` (double), optional
``building_id`` and ``grade`` (int), then one double property per attribute
column. The epoch is stored as ``comment epoch=pre|post``; further
``key=value`` comments carry provenance.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ParseError
from .pointcloud import Epoch, PointCloud

_INT_TYPES = {"char", "uchar", "short", "ushort", "int", "uint", "int8", "uint8", "int16", "uint16", "int32", "uint32"}
_FLOAT_TYPES = {"float", "double", "float32", "float64"}


def write_ply(path, cloud: PointCloud, comments: Optional[Dict[str, str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ["x", "y", "z"]
    types = ["double"] * 3
    columns = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]]
    fmts = ["%.17g"] * 3
    if cloud.building_id is not None:
        names.append("building_id")
        types.append("int")
        columns.append(cloud.building_id)
        fmts.append("%d")
    if cloud.grade is not None:
        names.append("grade")
        types.append("int")
        columns.append(cloud.grade)
        fmts.append("%d")
    for name, col in cloud.attributes.items():
        if name in ("x", "y", "z", "building_id", "grade"):
            raise ValueError(f"attribute name '{name}' is reserved")
        names.append(name)
        types.append("double")
        columns.append(col)
        fmts.append("%.17g")

    header = ["ply", "format ascii 1.0", f"comment epoch={cloud.epoch.value}"]
    for k, v in (comments or {}).items():
        header.append(f"comment {k}={v}")
    header.append(f"element vertex {len(cloud)}")
    header += [f"property {t} {n}" for t, n in zip(types, names)]
    header.append("end_header")

    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        if len(cloud):
            buf = io.StringIO()
            np.savetxt(buf, np.column_stack(columns), fmt=fmts, delimiter=" ")
            fh.write(buf.getvalue())


def read_ply(path) -> Tuple[PointCloud, Dict[str, str]]:
    """Read a cloud and its ``key=value`` header comments."""
    path = Path(path)
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        first = fh.readline().strip()
        if first != "ply":
            raise ParseError(f"{path}: not a PLY file")
        fmt = fh.readline().split()
        if fmt[:2] != ["format", "ascii"]:
            raise ParseError(f"{path}: only ASCII PLY is supported")
        comments = {}
        elements = []
        while True:
            line = fh.readline()
            if not line:
                raise ParseError(f"{path}: header not terminated")
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "end_header":
                break
            if parts[0] == "comment":
                body = line.strip()[len("comment") :].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    comments[k.strip()] = v.strip()
            elif parts[0] == "element":
                if len(parts) != 3:
                    raise ParseError(f"{path}: bad element line {line!r}")
                elements.append([parts[1], int(parts[2]), []])
            elif parts[0] == "property":
                if not elements:
                    raise ParseError(f"{path}: property before element")
                if parts[1] == "list":
                    raise ParseError(f"{path}: list properties are not supported")
                elements[-1][2].append((parts[1], parts[2]))
            elif parts[0] == "obj_info":
                continue
            else:
                raise ParseError(f"{path}: unexpected header line {line!r}")

        vertex = None
        for name, count, props in elements:
            if name == "vertex":
                vertex = (count, props)
                break
            for _ in range(count):
                fh.readline()
        if vertex is None:
            raise ParseError(f"{path}: no vertex element")
        count, props = vertex
        names = [p[1] for p in props]
        for req in ("x", "y", "z"):
            if req not in names:
                raise ParseError(f"{path}: missing property {req}")
        try:
            data = np.loadtxt(fh, dtype=np.float64, max_rows=count, ndmin=2) if count else np.empty((0, len(names)))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        if data.shape != (count, len(names)):
            raise ParseError(f"{path}: expected {count} rows of {len(names)} values, got {data.shape}")

    col = {n: data[:, k] for k, n in enumerate(names)}
    for t, n in props:
        if t not in _INT_TYPES | _FLOAT_TYPES:
            raise ParseError(f"{path}: unknown property type {t}")
    xyz = np.column_stack([col["x"], col["y"], col["z"]])
    bid = col["building_id"].astype(np.int64) if "building_id" in col else None
    grade = col["grade"].astype(np.int64) if "grade" in col else None
    attrs = {n: col[n] for n in names if n not in ("x", "y", "z", "building_id", "grade")}
    epoch = comments.get("epoch", "pre")
    try:
        epoch = Epoch(epoch)
    except ValueError:
        raise ParseError(f"{path}: bad epoch comment {epoch!r}") from None
    return PointCloud(xyz, attrs, bid, grade, epoch), comments
