"""Marching cubes for label masks.

The case table is derived at import time rather than transcribed. On every
cube face the contour separates diagonally opposite inside corners
(foreground is 6-connected), and because both cubes sharing a face apply the
same rule to it, the extracted surface is closed, manifold and consistently
oriented on any binary input.
"""
from __future__ import annotations

import numpy as np

from ..errors import EmptyMask, NonManifoldOutput
from ..volume_io import MaskVolume
from .mesh import TriMesh

CORNERS = np.array([(i & 1, (i >> 1) & 1, (i >> 2) & 1) for i in range(8)])
# (corner_a, corner_b, axis) with corner_a the lower end
EDGES = [(a, a | (1 << ax), ax) for ax in range(3) for a in range(8) if not a & (1 << ax)]
_EDGE_OF = {frozenset((a, b)): e for e, (a, b, _) in enumerate(EDGES)}
EDGE_MIDPOINTS = np.array([(CORNERS[a] + CORNERS[b]) / 2.0 for a, b, _ in EDGES])


def _cube_faces():
    """Corner cycles of the six faces, counter-clockwise seen from outside."""
    faces = []
    for axis in range(3):
        for side in (0, 1):
            corners = [c for c in range(8) if CORNERS[c][axis] == side]
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            centre = CORNERS[corners].mean(axis=0)
            u = np.roll(np.eye(3)[axis], 1)
            w = np.cross(normal, u)
            ang = [np.arctan2((CORNERS[c] - centre) @ w, (CORNERS[c] - centre) @ u) for c in corners]
            faces.append([corners[i] for i in np.argsort(ang)])
    return faces


CUBE_FACES = _cube_faces()
_FACE_EDGE_SETS = [
    {_EDGE_OF[frozenset((f[k], f[(k + 1) % 4]))] for k in range(4)} for f in CUBE_FACES
]


def _face_segments(cycle, inside):
    """Directed contour segments on one face, foreground kept on the left."""
    segs = []
    for k in range(4):
        a, b = cycle[k], cycle[(k + 1) % 4]
        if inside[a] and not inside[b]:
            for back in range(1, 4):
                j = (k - back) % 4
                c, d = cycle[j], cycle[(j + 1) % 4]
                if not inside[c] and inside[d]:
                    segs.append((_EDGE_OF[frozenset((a, b))], _EDGE_OF[frozenset((c, d))]))
                    break
    return segs


def _min_angle(tri):
    p = EDGE_MIDPOINTS[list(tri)]
    worst = np.pi
    for i in range(3):
        u, v = p[(i + 1) % 3] - p[i], p[(i + 2) % 3] - p[i]
        cosang = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
        worst = min(worst, np.arccos(np.clip(cosang, -1, 1)))
    return worst


def _share_face(e0, e1):
    return any(e0 in s and e1 in s for s in _FACE_EDGE_SETS)


def _triangulate(loop):
    """Best-min-angle triangulation whose diagonals never lie in a cube face."""
    n = len(loop)
    if n == 3:
        return [tuple(loop)]

    def allowed(i, j):
        return (j - i) % n in (1, n - 1) or not _share_face(loop[i], loop[j])

    best = {}
    for length in range(2, n):
        for i in range(0, n - length):
            j = i + length
            if not allowed(i, j) and not (i == 0 and j == n - 1):
                continue
            cand = None
            for k in range(i + 1, j):
                left = best.get((i, k), (np.pi, [])) if k - i > 1 else (np.pi, [])
                right = best.get((k, j), (np.pi, [])) if j - k > 1 else (np.pi, [])
                if (k - i > 1 and (i, k) not in best) or (j - k > 1 and (k, j) not in best):
                    continue
                tri = (loop[i], loop[k], loop[j])
                score = min(left[0], right[0], _min_angle(tri))
                if cand is None or score > cand[0] + 1e-12:
                    cand = (score, left[1] + [tri] + right[1])
            if cand is not None:
                best[(i, j)] = cand
    if (0, n - 1) not in best:
        raise NonManifoldOutput(f"no admissible triangulation for loop {loop}")
    return best[(0, n - 1)][1]


def _build_table():
    table = []
    for case in range(256):
        inside = [(case >> c) & 1 == 1 for c in range(8)]
        nxt = {}
        for cycle in CUBE_FACES:
            for a, b in _face_segments(cycle, inside):
                nxt[a] = b
        tris = []
        remaining = sorted(nxt)
        seen = set()
        for start in remaining:
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                seen.add(cur)
                cur = nxt[cur]
            tris.extend(_triangulate(loop))
        table.append(tris)
    return table


def _orientation_sign(table):
    # corner 0 alone inside: outward normal must point away from it
    (tri,) = table[1]
    p = EDGE_MIDPOINTS[list(tri)]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    return 1 if n @ (p.mean(axis=0) - CORNERS[0]) > 0 else -1


_RAW = _build_table()
if _orientation_sign(_RAW) < 0:
    _RAW = [[(t[0], t[2], t[1]) for t in tris] for tris in _RAW]
TRI_TABLE = _RAW
_MAX_TRIS = max(len(t) for t in TRI_TABLE)
# dense (256, max_tris, 3) table padded with -1
_TABLE_ARRAY = np.full((256, _MAX_TRIS, 3), -1, dtype=np.int64)
for _c, _tris in enumerate(TRI_TABLE):
    if _tris:
        _TABLE_ARRAY[_c, :len(_tris)] = _tris
_TRI_COUNT = np.array([len(t) for t in TRI_TABLE])
_EDGE_A = np.array([a for a, _, _ in EDGES])
_EDGE_AXIS = np.array([ax for _, _, ax in EDGES])


def marching_cubes_array(field: np.ndarray, iso: float = 0.5, spacing=(1.0, 1.0, 1.0),
                         origin=(0.0, 0.0, 0.0)) -> TriMesh:
    """Isosurface of a scalar grid indexed ``[i, j, k]``.

    The grid is padded with one layer of background (0, or below ``iso``) so
    the surface is always closed. Vertices sit on grid edges at the linear interpolation
    of the field (edge midpoints for 0/1 data).
    """
    field = np.asarray(field, dtype=np.float64)
    inside = field > iso
    if not inside.any():
        raise EmptyMask("no voxel exceeds the iso level")
    low = min(float(field.min()), 0.0)
    if low >= iso:
        low = iso - 1.0
    padded = np.pad(field, 1, constant_values=low)
    ins = np.pad(inside, 1, constant_values=False)
    px, py, pz = padded.shape

    case = np.zeros((px - 1, py - 1, pz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        case |= ins[dx:px - 1 + dx, dy:py - 1 + dy, dz:pz - 1 + dz].astype(np.int64) << c
    active = np.flatnonzero((case != 0) & (case != 255))
    cases = case.ravel()[active]
    ci, cj, ck = np.unravel_index(active, case.shape)

    counts = _TRI_COUNT[cases]
    cube_of_tri = np.repeat(np.arange(len(active)), counts)
    slot = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    local = _TABLE_ARRAY[cases[cube_of_tri], slot]  # (T, 3) local edge ids

    corner = CORNERS[_EDGE_A[local]]  # (T, 3, 3)
    gx = ci[cube_of_tri][:, None] + corner[..., 0]
    gy = cj[cube_of_tri][:, None] + corner[..., 1]
    gz = ck[cube_of_tri][:, None] + corner[..., 2]
    axis = _EDGE_AXIS[local]
    gid = ((axis * px + gx) * py + gy) * pz + gz
    uniq, inv = np.unique(gid.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3)

    ax_u, rem = np.divmod(uniq, px * py * pz)
    x0, rem = np.divmod(rem, py * pz)
    y0, z0 = np.divmod(rem, pz)
    lo = np.stack([x0, y0, z0], axis=1)
    hi = lo.copy()
    hi[np.arange(len(hi)), ax_u] += 1
    va = padded[lo[:, 0], lo[:, 1], lo[:, 2]]
    vb = padded[hi[:, 0], hi[:, 1], hi[:, 2]]
    t = (iso - va) / (vb - va)
    pos = lo.astype(np.float64)
    pos[np.arange(len(pos)), ax_u] += t
    verts = (pos - 1.0) * np.asarray(spacing, dtype=np.float64) + np.asarray(origin, dtype=np.float64)

    mesh = TriMesh(verts, faces)
    if not mesh.is_closed() or not mesh.is_consistently_oriented():
        raise NonManifoldOutput("marching cubes produced an open or inconsistently wound surface")
    return mesh


def marching_cubes(vol: MaskVolume, iso: float = 0.5) -> TriMesh:
    """Closed surface around the foreground (nonzero labels) of ``vol``."""
    fg = vol.foreground()
    if not fg.any():
        raise EmptyMask("mask has no foreground voxels")
    return marching_cubes_array(fg.astype(np.float64), iso, vol.spacing, vol.origin)
