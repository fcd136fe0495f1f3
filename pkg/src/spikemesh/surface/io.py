"""OBJ (geometry only) and ASCII PLY (geometry plus vertex channels)."""
from __future__ import annotations

import numpy as np

from ..errors import IoError, MalformedFile
from .mesh import TriMesh

# class channel -> rgb: base white, spiculation red, lobulation blue
CLASS_COLORS = {0: (255, 255, 255), 1: (255, 0, 0), 2: (0, 0, 255)}


def _open(path, mode):
    try:
        return open(path, mode, encoding="ascii", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc


def write_obj(mesh: TriMesh, path) -> None:
    with _open(path, "w") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.faces + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


def _obj_index(token: str, n: int, lineno: int) -> int:
    # "7", "7/2" and "7/2/5" all reference vertex 7; negative indices count back
    try:
        i = int(token.split("/")[0])
    except ValueError:
        raise MalformedFile(f"line {lineno}: bad face index {token!r}") from None
    if i < 0:
        i += n + 1
    if not 1 <= i <= n:
        raise MalformedFile(f"line {lineno}: face index {token} out of range")
    return i - 1


def read_obj(path) -> TriMesh:
    """Read vertices and triangles; anything but triangles is rejected."""
    verts, faces = [], []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    verts.append([float(t) for t in parts[1:4]])
                except ValueError:
                    raise MalformedFile(f"line {lineno}: bad vertex") from None
                if len(verts[-1]) != 3:
                    raise MalformedFile(f"line {lineno}: vertex needs 3 coordinates")
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MalformedFile(f"line {lineno}: only triangles are supported, got "
                                        f"{len(parts) - 1} vertices")
                faces.append([_obj_index(t, len(verts), lineno) for t in parts[1:]])
    if not verts or not faces:
        raise MalformedFile(f"{path}: no geometry")
    try:
        return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))
    except ValueError as exc:
        raise MalformedFile(str(exc)) from exc


def write_ply(mesh: TriMesh, path, comments=()) -> None:
    """ASCII PLY with ``epsilon`` and ``class`` vertex properties and rgb colors.

    Missing channels are written as 0. Class codes outside the color table are
    rejected.
    """
    n = mesh.n_vertices
    eps = np.asarray(mesh.channels.get("epsilon", np.zeros(n)), dtype=float)
    cls = np.asarray(mesh.channels.get("class", np.zeros(n)), dtype=np.int64)
    bad = set(np.unique(cls).tolist()) - set(CLASS_COLORS)
    if bad:
        raise ValueError(f"class values {sorted(bad)} have no color")
    rgb = np.array([CLASS_COLORS[c] for c in range(3)])[cls]
    header = ["ply", "format ascii 1.0"]
    header += [f"comment {c}" for c in comments]
    header += [f"element vertex {n}", "property double x", "property double y", "property double z",
               "property double epsilon", "property uchar class",
               "property uchar red", "property uchar green", "property uchar blue",
               f"element face {mesh.n_faces}", "property list uchar int vertex_indices",
               "end_header"]
    with _open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        for (x, y, z), e, c, (r, g, b) in zip(mesh.vertices.tolist(), eps.tolist(), cls.tolist(),
                                               rgb.tolist()):
            fh.write(f"{x!r} {y!r} {z!r} {e!r} {c} {r} {g} {b}\n")
        for a, b, c in mesh.faces.tolist():
            fh.write(f"3 {a} {b} {c}\n")


def read_ply(path) -> TriMesh:
    """Read back files produced by :func:`write_ply` (ASCII, triangles)."""
    with _open(path, "r") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != "ply" or "format ascii 1.0" not in lines[1:3]:
        raise MalformedFile(f"{path}: not an ASCII PLY file")
    props, counts, order, i = {}, {}, [], 1
    while i < len(lines) and lines[i] != "end_header":
        parts = lines[i].split()
        if parts and parts[0] == "element":
            order.append(parts[1])
            counts[parts[1]] = int(parts[2])
            props[parts[1]] = []
        elif parts and parts[0] == "property" and parts[1] != "list":
            props[order[-1]].append(parts[2])
        i += 1
    if i == len(lines):
        raise MalformedFile(f"{path}: missing end_header")
    body = lines[i + 1:]
    nv, nf = counts.get("vertex", 0), counts.get("face", 0)
    if len(body) < nv + nf:
        raise MalformedFile(f"{path}: truncated body")
    vdata = np.array([[float(t) for t in body[k].split()] for k in range(nv)]).reshape(nv, -1)
    fdata = [body[nv + k].split() for k in range(nf)]
    if any(len(row) != 4 or row[0] != "3" for row in fdata):
        raise MalformedFile(f"{path}: only triangles are supported")
    names = props["vertex"]
    col = {name: j for j, name in enumerate(names)}
    verts = vdata[:, [col["x"], col["y"], col["z"]]]
    channels = {}
    if "epsilon" in col:
        channels["epsilon"] = vdata[:, col["epsilon"]]
    if "class" in col:
        channels["class"] = vdata[:, col["class"]].astype(np.uint8)
    faces = np.array([[int(t) for t in row[1:]] for row in fdata], dtype=np.int64).reshape(nf, 3)
    return TriMesh(verts, faces, channels)
