"""Spike detection on the area-distortion map, sharp/curved classification,
vertex annotation and voxelization back onto the mask grid."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import ConnectivityMismatch, GridTooCoarse
from .spherical import AreaDistortionMap
from .surface.mesh import TriMesh
from .volume_io import BACKGROUND, BASE, LOBULATION, SPICULATION, MaskVolume

SPICULATION_CLASS = "spiculation"
LOBULATION_CLASS = "lobulation"
OTHER_CLASS = "other"

# per-vertex codes on the mesh; the voxel codes live in volume_io
VERTEX_BASE, VERTEX_SPICULATION, VERTEX_LOBULATION = 0, 1, 2
_VOXEL_CODE = {VERTEX_BASE: BASE, VERTEX_SPICULATION: SPICULATION, VERTEX_LOBULATION: LOBULATION}
_TIE_PRIORITY = {VERTEX_SPICULATION: 2, VERTEX_LOBULATION: 1, VERTEX_BASE: 0}

SUMMARY_NOTE = ("summary features are interpretable geometric stand-ins (counts, area "
                "fractions, apex angles), not a published spiculation score")


@dataclass(frozen=True)
class SpikeOptions:
    noise_floor: float = -0.02
    min_vertices: int = 8
    theta_spic_deg: float = 65.0
    min_height_mm: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.noise_floor) or self.noise_floor > 0:
            raise ValueError("noise_floor must be a finite value <= 0")
        if self.min_vertices < 1:
            raise ValueError("min_vertices must be >= 1")
        if not 0 < self.theta_spic_deg < 180:
            raise ValueError("theta_spic_deg must lie in (0, 180)")
        if not math.isfinite(self.min_height_mm) or self.min_height_mm < 0:
            raise ValueError("min_height_mm must be finite and >= 0")


@dataclass
class Spike:
    vertex_ids: np.ndarray
    apex_id: int
    height_mm: float
    base_radius_mm: float
    apex_angle_deg: float
    mean_epsilon: float
    min_epsilon: float
    cls: str | None = None

    def to_dict(self) -> dict:
        return {
            "apex_id": int(self.apex_id),
            "n_vertices": int(len(self.vertex_ids)),
            "height_mm": float(self.height_mm),
            "base_radius_mm": float(self.base_radius_mm),
            "apex_angle_deg": float(self.apex_angle_deg),
            "mean_epsilon": float(self.mean_epsilon),
            "min_epsilon": float(self.min_epsilon),
            "class": self.cls,
            "vertex_ids": [int(v) for v in self.vertex_ids],
        }


@dataclass
class NoduleAnnotation:
    vertex_class: np.ndarray
    spikes: list[Spike]
    summary: dict
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "spikes": [s.to_dict() for s in self.spikes],
            "summary": dict(self.summary),
            "params": dict(self.params),
            "notes": SUMMARY_NOTE,
        }


def _spike_geometry(mesh: TriMesh, members: np.ndarray, eps: np.ndarray):
    in_set = np.zeros(mesh.n_vertices, dtype=bool)
    in_set[members] = True
    adj = mesh.adjacency
    outside_nbrs = adj[members] @ (~in_set).astype(float)
    boundary = members[outside_nbrs > 0]
    if len(boundary) < 3:
        # degenerate (tiny) components: use the ring just outside instead
        boundary = np.flatnonzero((adj @ in_set.astype(float) > 0) & ~in_set)
    pts = mesh.vertices[boundary]
    centroid = pts.mean(axis=0)
    # apex: lowest epsilon, lowest index on ties
    apex = int(members[np.lexsort((members, eps[members]))[0]])
    if len(pts) >= 3:
        _, _, vt = np.linalg.svd(pts - centroid)
        normal = vt[-1]
        height = abs(float((mesh.vertices[apex] - centroid) @ normal))
    else:
        height = float(np.linalg.norm(mesh.vertices[apex] - centroid))
    radius = float(np.mean(np.linalg.norm(pts - centroid, axis=1)))
    angle = math.degrees(2.0 * math.atan2(radius, height))
    return apex, height, radius, angle


def detect_spikes(mesh: TriMesh, adm: AreaDistortionMap, noise_floor: float = -0.02,
                  min_vertices: int = 8) -> list[Spike]:
    """Connected regions of ``epsilon <= noise_floor`` on the vertex graph.

    Regions with fewer than ``min_vertices`` members come back already
    labelled ``"other"``; the rest are unclassified. Sorted by minimum
    epsilon, most negative first.
    """
    eps = np.asarray(adm.epsilon_vertex, dtype=float)
    if len(eps) != mesh.n_vertices:
        raise ConnectivityMismatch(f"{len(eps)} epsilon values for {mesh.n_vertices} vertices")
    sel = np.flatnonzero(eps <= noise_floor)
    if len(sel) == 0:
        return []
    sub = mesh.adjacency[sel][:, sel]
    # components are numbered from their lowest vertex id, so this is deterministic
    n, labels = csgraph.connected_components(sub, directed=False)
    spikes = []
    for c in range(n):
        members = sel[labels == c]
        apex, height, radius, angle = _spike_geometry(mesh, members, eps)
        spikes.append(Spike(
            vertex_ids=members, apex_id=apex, height_mm=height, base_radius_mm=radius,
            apex_angle_deg=angle, mean_epsilon=float(eps[members].mean()),
            min_epsilon=float(eps[apex]),
            cls=OTHER_CLASS if len(members) < min_vertices else None,
        ))
    spikes.sort(key=lambda s: (s.min_epsilon, s.apex_id))
    return spikes


def classify_spike(spike: Spike, theta_spic_deg: float = 65.0, min_height_mm: float = 1.0,
                   min_vertices: int = 8) -> str:
    """Sharp spikes (apex angle below ``theta_spic_deg``) are spiculations,
    blunter ones lobulations; small or low spikes are ``"other"``."""
    if len(spike.vertex_ids) < min_vertices or spike.height_mm < min_height_mm:
        return OTHER_CLASS
    if spike.apex_angle_deg < theta_spic_deg:
        return SPICULATION_CLASS
    return LOBULATION_CLASS


def annotate(mesh: TriMesh, adm: AreaDistortionMap, options: SpikeOptions | None = None) -> NoduleAnnotation:
    opts = options or SpikeOptions()
    spikes = detect_spikes(mesh, adm, opts.noise_floor, opts.min_vertices)
    vertex_class = np.full(mesh.n_vertices, VERTEX_BASE, dtype=np.uint8)
    for s in spikes:
        s.cls = classify_spike(s, opts.theta_spic_deg, opts.min_height_mm, opts.min_vertices)
        if s.cls == SPICULATION_CLASS:
            vertex_class[s.vertex_ids] = VERTEX_SPICULATION
        elif s.cls == LOBULATION_CLASS:
            vertex_class[s.vertex_ids] = VERTEX_LOBULATION

    areas = mesh.one_ring_areas()
    total = math.fsum(areas)
    base_frac, spic_frac, lob_frac = (math.fsum(areas[vertex_class == c]) / total
                                      for c in (VERTEX_BASE, VERTEX_SPICULATION, VERTEX_LOBULATION))
    spic_angles = [s.apex_angle_deg for s in spikes if s.cls == SPICULATION_CLASS]
    summary = {
        "n_spiculations": sum(s.cls == SPICULATION_CLASS for s in spikes),
        "n_lobulations": sum(s.cls == LOBULATION_CLASS for s in spikes),
        "n_other": sum(s.cls == OTHER_CLASS for s in spikes),
        "base_area_fraction": base_frac,
        "spiculation_area_fraction": spic_frac,
        "lobulation_area_fraction": lob_frac,
        "min_epsilon": float(np.min(adm.epsilon_vertex)),
        "mean_apex_angle_spiculation_deg": float(np.mean(spic_angles)) if spic_angles else None,
    }
    return NoduleAnnotation(vertex_class, spikes, summary, params=asdict(opts))


# -- voxelization ----------------------------------------------------------

# fixed sub-voxel ray offsets keep rays off mesh vertices and edges, which on
# marching-cubes output sit exactly on grid lines
_RAY_JITTER = (1.3e-6, 2.9e-6)


def inside_mask(mesh: TriMesh, grid: MaskVolume) -> np.ndarray:
    """Voxel centres inside the closed mesh, by parity of +x ray crossings."""
    nx, ny, nz = grid.dims
    (ox, oy, oz), (sx, sy, sz) = grid.origin, grid.spacing
    p0, p1, p2 = mesh.face_vectors()
    # work in continuous voxel-index coordinates
    scale = np.array([sx, sy, sz])
    org = np.array([ox, oy, oz])
    a, b, c = ((q - org) / scale for q in (p0, p1, p2))
    jy, jz = _RAY_JITTER
    ys = np.stack([a[:, 1], b[:, 1], c[:, 1]], 1) - jy
    zs = np.stack([a[:, 2], b[:, 2], c[:, 2]], 1) - jz
    j_lo = np.clip(np.ceil(ys.min(1)), 0, ny).astype(np.int64)
    j_hi = np.clip(np.floor(ys.max(1)), -1, ny - 1).astype(np.int64)
    k_lo = np.clip(np.ceil(zs.min(1)), 0, nz).astype(np.int64)
    k_hi = np.clip(np.floor(zs.max(1)), -1, nz - 1).astype(np.int64)
    nj = np.maximum(j_hi - j_lo + 1, 0)
    nk = np.maximum(k_hi - k_lo + 1, 0)
    count = nj * nk
    tri = np.repeat(np.arange(len(count)), count)
    local = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
    j = j_lo[tri] + local // nk[tri]
    k = k_lo[tri] + local % nk[tri]

    # 2D barycentric coordinates of the ray point in the triangle's yz shadow
    y0, y1, y2 = ys[tri, 0], ys[tri, 1], ys[tri, 2]
    z0, z1, z2 = zs[tri, 0], zs[tri, 1], zs[tri, 2]
    det = (y1 - y0) * (z2 - z0) - (y2 - y0) * (z1 - z0)
    ok = det != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = ((j - y0) * (z2 - z0) - (y2 - y0) * (k - z0)) / det
        l2 = ((y1 - y0) * (k - z0) - (j - y0) * (z1 - z0)) / det
        l0 = 1.0 - l1 - l2
        hit = ok & (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
    xh = l0 * a[tri, 0] + l1 * b[tri, 0] + l2 * c[tri, 0]
    j, k, xh = j[hit], k[hit], xh[hit]

    # a crossing at x counts for every voxel centre with index < x
    first_after = np.clip(np.floor(xh) + 1, 0, nx).astype(np.int64)
    counts = np.zeros((ny, nz, nx + 1), dtype=np.int64)
    np.add.at(counts, (j, k, first_after), 1)
    # number of crossings strictly ahead of voxel i = sum over m > i
    ahead = np.cumsum(counts[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    return np.transpose(ahead % 2 == 1, (2, 0, 1))


def points_to_mesh_distance(points: np.ndarray, mesh: TriMesh, radius: float) -> np.ndarray:
    """Distance from each point to the surface, or ``inf`` if farther than ``radius``."""
    tree = cKDTree(points)
    p0, p1, p2 = mesh.face_vectors()
    centroid = (p0 + p1 + p2) / 3.0
    circ = np.max(np.linalg.norm(np.stack([p0, p1, p2]) - centroid, axis=2), axis=0)
    out = np.full(len(points), np.inf)
    pairs = tree.query_ball_point(centroid, circ + radius)
    lens = np.fromiter((len(q) for q in pairs), dtype=np.int64, count=len(pairs))
    if lens.sum() == 0:
        return out
    tri = np.repeat(np.arange(len(pairs)), lens)
    pt = np.concatenate([np.asarray(q, dtype=np.int64) for q in pairs if q])
    d = _point_triangle_distance(points[pt], p0[tri], p1[tri], p2[tri])
    np.minimum.at(out, pt, d)
    out[out > radius] = np.inf
    return out


def _point_triangle_distance(p, a, b, c):
    """Vectorized closest-point distance (Ericson, Real-Time Collision Detection 5.1.5)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        closest = a + ab * v[:, None] + ac * w[:, None]

        edge_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        closest = np.where(edge_ab[:, None], a + ab * t[:, None], closest)
        edge_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        closest = np.where(edge_ac[:, None], a + ac * t[:, None], closest)
        edge_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        closest = np.where(edge_bc[:, None], b + (c - b) * t[:, None], closest)

    closest = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, closest)
    closest = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, closest)
    closest = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, closest)
    return np.linalg.norm(p - closest, axis=1)


def voxelize_annotation(ann: NoduleAnnotation, mesh: TriMesh, grid: MaskVolume) -> MaskVolume:
    """Rasterize a vertex annotation onto ``grid``.

    Voxel centres inside the mesh become base (1). Inside voxels whose centre
    lies within half a voxel diagonal of the surface take the class of the
    nearest mesh vertex (spiculation 2, lobulation 3), with ties going to
    spiculation, then lobulation, then base.
    """
    if len(ann.vertex_class) != mesh.n_vertices:
        raise ConnectivityMismatch("annotation and mesh disagree on vertex count")
    spacing = np.asarray(grid.spacing)
    bbox = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    if np.any(bbox < 3 * spacing):
        raise GridTooCoarse(f"mesh bounding box {bbox} spans fewer than 3 voxels on some axis")

    inside = inside_mask(mesh, grid)
    labels = np.where(inside, BASE, BACKGROUND).astype(np.uint8)
    vc = np.asarray(ann.vertex_class)
    if np.any(vc != VERTEX_BASE) and inside.any():
        idx = np.argwhere(inside)
        centers = np.asarray(grid.origin) + idx * spacing
        half_diag = 0.5 * float(np.linalg.norm(spacing))
        dist = points_to_mesh_distance(centers, mesh, half_diag)
        near = np.isfinite(dist)
        idx, centers = idx[near], centers[near]
        if len(idx):
            tree = cKDTree(mesh.vertices)
            k = min(8, mesh.n_vertices)
            dd, ii = tree.query(centers, k=k)
            dd, ii = dd.reshape(len(centers), k), ii.reshape(len(centers), k)
            tied = dd <= dd[:, :1] * (1 + 1e-9) + 1e-12
            prio = np.vectorize(_TIE_PRIORITY.get)(vc[ii])
            prio = np.where(tied, prio, -1)
            best = vc[ii[np.arange(len(ii)), np.argmax(prio, axis=1)]]
            codes = np.vectorize(_VOXEL_CODE.get)(best).astype(np.uint8)
            labels[idx[:, 0], idx[:, 1], idx[:, 2]] = codes
    return MaskVolume(labels, grid.spacing, grid.origin, {BACKGROUND, BASE, SPICULATION, LOBULATION})
