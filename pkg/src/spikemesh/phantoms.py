"""Synthetic nodules and meshes with known geometry, for tests and demos."""
from __future__ import annotations

import numpy as np

from .surface.mesh import TriMesh
from .volume_io import MaskVolume


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = np.array(verts, dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(faces, dtype=np.int64)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = len(f)
        a, b, c = (inv[:m] + len(v), inv[m:2 * m] + len(v), inv[2 * m:] + len(v))
        v = np.vstack([v, mid])
        f = np.concatenate([
            np.stack([f[:, 0], a, c], 1), np.stack([f[:, 1], b, a], 1),
            np.stack([f[:, 2], c, b], 1), np.stack([a, b, c], 1)])
    return TriMesh(v * radius + np.asarray(center, dtype=float), f)


def cube_mesh(size: float = 1.0) -> TriMesh:
    v = np.array([(x, y, z) for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float) * size
    f = np.array([(0, 2, 1), (1, 2, 3), (4, 5, 6), (5, 7, 6), (0, 1, 4), (1, 5, 4),
                  (2, 6, 3), (3, 6, 7), (0, 4, 2), (2, 4, 6), (1, 3, 5), (3, 7, 5)])
    return TriMesh(v, f)


def regular_tetrahedron(edge: float = 1.0) -> TriMesh:
    v = np.array([(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)], dtype=float)
    v *= edge / np.sqrt(8.0)
    f = np.array([(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)])
    return TriMesh(v, f)


def torus_mesh(major: float = 2.0, minor: float = 0.7, nu: int = 24, nv: int = 12) -> TriMesh:
    u = np.arange(nu) * 2 * np.pi / nu
    w = np.arange(nv) * 2 * np.pi / nv
    uu, ww = np.meshgrid(u, w, indexing="ij")
    x = (major + minor * np.cos(ww)) * np.cos(uu)
    y = (major + minor * np.cos(ww)) * np.sin(uu)
    z = minor * np.sin(ww)
    verts = np.stack([x, y, z], -1).reshape(-1, 3)
    idx = lambda i, j: (i % nu) * nv + (j % nv)  # noqa: E731
    faces = []
    for i in range(nu):
        for j in range(nv):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(faces))


def plane_grid(n: int = 5, spacing: float = 1.0) -> TriMesh:
    xs = np.arange(n) * spacing
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.zeros(n * n)], 1)
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(faces))


def merge_meshes(*meshes: TriMesh) -> TriMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return TriMesh(np.vstack(verts), np.vstack(faces))


def _unit(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return d / np.linalg.norm(d)


def radial_profile_mesh(base: TriMesh, radius: float, cones=(), bumps=(), ripples=None) -> TriMesh:
    """Star-shaped surface ``r(direction)`` sampled on the directions of ``base``.

    ``cones`` are ``(direction, length, half_angle_deg)``: a straight cone of
    the given half-angle whose apex sits ``length`` above the sphere.
    ``bumps`` are ``(direction, bump_radius)``: a ball of that radius centred
    on the sphere surface.
    """
    d = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
    r = np.full(len(d), float(radius))
    for direction, length, half_angle in cones:
        axis = _unit(direction)
        tan_h = np.tan(np.radians(half_angle))
        # ray t*d hits the cone surface |x - (x.axis)axis| = tan_h * (apex.axis - x.axis)
        cos_t = d @ axis
        sin_t = np.sqrt(np.clip(1 - cos_t ** 2, 0, None))
        denom = sin_t + tan_h * cos_t
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = tan_h * (radius + length) / denom
        # the solid cone is convex and stops at the plane through the centre
        r = np.maximum(r, np.where(cos_t > 0, t_hit, 0.0))
    for direction, rb in bumps:
        c = radius * _unit(direction)
        cd = d @ c
        disc = cd ** 2 - (c @ c - rb ** 2)
        t_hit = cd + np.sqrt(np.clip(disc, 0, None))
        r = np.maximum(r, np.where(disc > 0, t_hit, 0.0))
    if ripples is not None:
        r = r * ripples(d)
    return TriMesh(d * r[:, None], base.faces.copy())


def random_star_mesh(rng: np.random.Generator, subdivisions: int = 3, amplitude: float = 0.25,
                     n_terms: int = 4) -> TriMesh:
    """Icosphere with a smooth random radial modulation, always star-shaped."""
    base = icosphere(subdivisions)
    dirs = rng.normal(size=(n_terms, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freqs = rng.uniform(1.0, 3.0, n_terms)
    phases = rng.uniform(0, 2 * np.pi, n_terms)
    weights = rng.uniform(-1, 1, n_terms) * amplitude / n_terms

    def ripple(d):
        return 1.0 + np.sum(weights * np.sin(freqs * (d @ dirs.T) * np.pi + phases), axis=1)

    return radial_profile_mesh(base, 1.0, ripples=ripple)


def _grid(radius_extent: float, spacing: float):
    n = int(np.ceil(2 * radius_extent / spacing)) + 3
    ax = (np.arange(n) - (n - 1) / 2.0) * spacing
    return ax, np.meshgrid(ax, ax, ax, indexing="ij")


def spiked_sphere_mask(radius: float = 8.0, spacing: float = 0.5, cones=(), bumps=(),
                       label: int = 1) -> MaskVolume:
    """Voxelized union of a ball with cones and ball-shaped bumps.

    Geometry arguments are in mm and match :func:`radial_profile_mesh`. The
    ball is centred at the physical origin.
    """
    extent = radius
    for _, length, _ in cones:
        extent = max(extent, radius + length)
    for _, rb in bumps:
        extent = max(extent, radius + rb)
    ax, (x, y, z) = _grid(extent + 2 * spacing, spacing)
    pts = np.stack([x, y, z], -1)
    inside = np.sum(pts ** 2, -1) <= radius ** 2
    for direction, length, half_angle in cones:
        axis = _unit(direction)
        apex = (radius + length) * axis
        s = (apex - pts) @ axis
        radial = np.linalg.norm((pts - apex) - np.multiply.outer(-s, axis), axis=-1)
        inside |= (s >= 0) & (s <= radius + length) & (radial <= s * np.tan(np.radians(half_angle)))
    for direction, rb in bumps:
        c = radius * _unit(direction)
        inside |= np.sum((pts - c) ** 2, -1) <= rb ** 2
    origin = (float(ax[0]),) * 3
    return MaskVolume(inside.astype(np.uint8) * label, (spacing,) * 3, origin)


def sphere_mask(radius: float = 8.0, spacing: float = 0.5) -> MaskVolume:
    return spiked_sphere_mask(radius, spacing)


def blob_mask(rng: np.random.Generator, radius: float = 8.0, spacing: float = 1.0,
              amplitude: float = 0.2) -> MaskVolume:
    """Smooth random star-shaped blob voxelized on a grid."""
    dirs = rng.normal(size=(3, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    w = rng.uniform(-amplitude, amplitude, 3)
    ax, (x, y, z) = _grid(radius * (1 + amplitude) + 2 * spacing, spacing)
    pts = np.stack([x, y, z], -1)
    r = np.linalg.norm(pts, axis=-1)
    d = pts / np.maximum(r, 1e-12)[..., None]
    rad = radius * (1 + np.sum(w * np.cos(2 * np.pi * (d @ dirs.T)), axis=-1) / 3)
    return MaskVolume((r <= rad).astype(np.uint8), (spacing,) * 3, (float(ax[0]),) * 3)


def mesh_to_mask(mesh: TriMesh, spacing: float = 0.5, margin_voxels: int = 2) -> MaskVolume:
    """Voxelize the interior of a closed mesh on a grid covering its bounding box."""
    from .spikes import inside_mask

    lo = mesh.vertices.min(axis=0) - margin_voxels * spacing
    hi = mesh.vertices.max(axis=0) + margin_voxels * spacing
    dims = tuple(int(n) for n in np.ceil((hi - lo) / spacing).astype(int) + 1)
    grid = MaskVolume(np.zeros(dims, dtype=np.uint8), (spacing,) * 3, tuple(float(x) for x in lo))
    return grid.with_labels(inside_mask(mesh, grid).astype(np.uint8))


def icosphere_mask(radius: float = 8.0, spacing: float = 0.5, subdivisions: int = 4) -> MaskVolume:
    return mesh_to_mask(icosphere(subdivisions, radius), spacing)
