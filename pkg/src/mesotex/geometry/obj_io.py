"""Wavefront OBJ subset: ``v``, ``vn``, ``vt`` and triangular ``f`` records."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import TriangleMesh


class ObjFormatError(ValueError):
    pass


def _parse_corner(tok: str, lineno: int):
    parts = tok.split("/")
    try:
        vi = int(parts[0])
        ti = int(parts[1]) if len(parts) > 1 and parts[1] else None
        ni = int(parts[2]) if len(parts) > 2 and parts[2] else None
    except ValueError as exc:
        raise ObjFormatError(f"line {lineno}: bad face corner {tok!r}") from exc
    return vi, ti, ni


def _resolve(i, n):
    # OBJ indices are 1-based, negatives count from the end
    return i - 1 if i > 0 else n + i


def read_obj(path) -> TriangleMesh:
    """Load a triangle mesh; polygons with more than three corners are rejected.

    Per-vertex normals come from ``vn`` records when every face corner references
    one (the last reference for a vertex wins); otherwise they are recomputed by
    area-weighted face averaging.
    """
    V, VT, VN = [], [], []
    F, FT, FN = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            kind = tok[0]
            if kind == "v":
                V.append([float(x) for x in tok[1:4]])
            elif kind == "vt":
                VT.append([float(x) for x in tok[1:3]])
            elif kind == "vn":
                VN.append([float(x) for x in tok[1:4]])
            elif kind == "f":
                corners = [_parse_corner(t, lineno) for t in tok[1:]]
                if len(corners) != 3:
                    raise ObjFormatError(f"line {lineno}: only triangles are supported, got {len(corners)} corners")
                F.append([_resolve(c[0], len(V)) for c in corners])
                FT.append([None if c[1] is None else _resolve(c[1], len(VT)) for c in corners])
                FN.append([None if c[2] is None else _resolve(c[2], len(VN)) for c in corners])
    if not V or not F:
        raise ObjFormatError(f"{path}: no vertices or faces")
    V = np.asarray(V, dtype=np.float64)
    faces = np.asarray(F, dtype=np.int64)

    uv = None
    if VT and all(t is not None for row in FT for t in row):
        uv = np.asarray(VT, dtype=np.float64)[np.asarray(FT, dtype=np.int64)]

    normals = None
    if VN and all(n is not None for row in FN for n in row):
        VN = np.asarray(VN, dtype=np.float64)
        normals = np.zeros_like(V)
        normals[faces.ravel()] = VN[np.asarray(FN, dtype=np.int64).ravel()]
    return TriangleMesh.from_arrays(V, faces, normals, uv)


def write_obj(mesh: TriangleMesh, path) -> None:
    """Write vertices, per-vertex normals and (deduplicated) per-corner UVs."""
    lines = ["# mesotex mesh"]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertex_normals]
    if mesh.uv is not None:
        flat = mesh.uv.reshape(-1, 2)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        inv = inv.reshape(-1, 3)
        lines += [f"vt {u:.9g} {v:.9g}" for u, v in uniq]
        for f, t in zip(mesh.faces + 1, inv + 1):
            lines.append("f " + " ".join(f"{a}/{b}/{a}" for a, b in zip(f, t)))
    else:
        lines += ["f " + " ".join(f"{a}//{a}" for a in f) for f in mesh.faces + 1]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
