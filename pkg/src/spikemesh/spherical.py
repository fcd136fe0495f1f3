"""Spherical parameterization of genus-0 surfaces and the area-distortion map.

The map starts from a radial projection about the surface centroid and is
relaxed by tangential cotangent-Laplacian steps on the unit sphere. Every
accepted sweep is followed by a Möbius re-centering that balances the
input-area measure on the sphere, which is what stops the harmonic flow from
collapsing onto a point. A sweep is only accepted when the energy does not
increase and no spherical triangle is flipped; otherwise the step is halved.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConnectivityMismatch, NoBijectiveMap, NonManifold, NotGenusZero
from .surface.mesh import TriMesh, mesh_stats

log = logging.getLogger(__name__)

_MIN_STEP = 1.0 / 2**20


@dataclass(eq=False)
class SphericalMap:
    positions: np.ndarray
    iterations_used: int
    final_energy: float
    energy_history: list[float] = field(default_factory=list)

    def dump_energy(self, path) -> None:
        """Write the per-sweep energy trace as ``sweep,energy`` lines."""
        with open(path, "w") as fh:
            fh.write("sweep,energy\n")
            for i, e in enumerate(self.energy_history):
                fh.write(f"{i},{e!r}\n")


@dataclass(eq=False)
class AreaDistortionMap:
    epsilon_vertex: np.ndarray
    epsilon_face: np.ndarray


def cotangent_weights(mesh: TriMesh, clamp: bool = False) -> sp.csr_matrix:
    """Symmetric edge weights ``(cot a + cot b) / 2`` from the input geometry."""
    v, f = mesh.vertices, mesh.faces
    rows, cols, vals = [], [], []
    for k in range(3):
        o, i, j = f[:, k], f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        u, w = v[i] - v[o], v[j] - v[o]
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        cot = np.einsum("ij,ij->i", u, w) / np.maximum(cross, 1e-300)
        if clamp:
            cot = np.maximum(cot, 0.0)
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cot, 0.5 * cot]
    n = mesh.n_vertices
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def harmonic_energy(weights: sp.csr_matrix, positions: np.ndarray) -> float:
    """Spring energy ``1/2 sum_edges w_ij |p_i - p_j|^2``."""
    lp = weights @ positions
    deg = np.asarray(weights.sum(axis=1)).ravel()
    # p^T L p with L = D - W, summed over coordinates, halves to the edge sum
    return 0.5 * float(np.sum(deg[:, None] * positions * positions) - np.sum(positions * lp))


def flipped_faces(mesh: TriMesh, positions: np.ndarray) -> np.ndarray:
    """Boolean mask of faces whose spherical image is inverted or degenerate."""
    p0, p1, p2 = (positions[mesh.faces[:, i]] for i in range(3))
    # edge-vector form stays accurate for the tiny triangles of compressed spikes
    det = np.einsum("ij,ij->i", np.cross(p1 - p0, p2 - p0), p0 + p1 + p2)
    return det <= 0.0


def _normalize(p: np.ndarray) -> np.ndarray:
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def mobius_center(positions: np.ndarray, weights: np.ndarray, tol: float = 1e-12,
                  max_rounds: int = 200) -> np.ndarray:
    """Apply ball automorphisms until the weighted centroid is at the origin.

    Each round uses ``x -> ((1-|a|^2)(x-a) - |x-a|^2 a) / (1 - 2 a.x + |a|^2)``,
    which pushes mass away from ``a``; ``a = 3/4 mu`` cancels the centroid
    ``mu`` to first order for a near-uniform distribution.
    """
    p = positions
    for _ in range(max_rounds):
        mu = weights @ p
        norm = np.linalg.norm(mu)
        if norm < tol:
            break
        a = 0.75 * mu
        if norm > 0.5:
            a *= 0.375 / norm
        aa = a @ a
        xa = p - a
        num = (1.0 - aa) * xa - np.sum(xa * xa, axis=1, keepdims=True) * a
        den = 1.0 - 2.0 * (p @ a) + aa
        p = _normalize(num / den[:, None])
    return p


def balance_weights(mesh: TriMesh, initial: np.ndarray) -> np.ndarray:
    """Per-vertex measure that the Möbius re-centering balances on the sphere.

    The smaller of the normalized input one-ring area and the normalized
    one-ring area under the current map ``initial``. Protrusions project
    onto small caps, so their weight drops to that cap; the smooth body keeps
    its input area. Balancing raw input area instead would push the body's
    mass to the side opposite a spike and compress it there.
    """
    a_in = mesh.one_ring_areas()
    a_sph = mesh.vertex_face_sum(mesh.face_areas(initial))
    w = np.minimum(a_in / a_in.sum(), a_sph / a_sph.sum())
    return w / w.sum()


def _check_topology(mesh: TriMesh) -> None:
    if not mesh.is_manifold() or not mesh.is_closed() or not mesh.is_consistently_oriented():
        raise NonManifold("parameterization needs a closed, manifold, consistently oriented mesh")
    stats = mesh_stats(mesh)
    if stats["components"] != 1 or stats["genus"] != 0:
        raise NotGenusZero(f"expected one genus-0 component, got euler={stats['euler']}, "
                           f"components={stats['components']}")


def _repair_flips(mesh: TriMesh, p: np.ndarray, rounds: int) -> np.ndarray:
    """Uniform-weight relaxation restricted to a growing region around flips."""
    adj = mesh.adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    region = np.zeros(mesh.n_vertices, dtype=bool)
    for r in range(rounds):
        bad = flipped_faces(mesh, p)
        if not bad.any():
            return p
        region[mesh.faces[bad].ravel()] = True
        # widen one ring every few rounds so stubborn folds get room to unfold
        if r % 5 == 4:
            region |= (adj @ region.astype(float)) > 0
        idx = np.flatnonzero(region)
        for _ in range(10):
            avg = (adj[idx] @ p) / deg[idx, None]
            p = p.copy()
            p[idx] = _normalize(avg)
    if flipped_faces(mesh, p).any():
        raise NoBijectiveMap(f"{int(flipped_faces(mesh, p).sum())} faces still flipped after repair")
    return p


def _safe_step(mesh: TriMesh, p: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Move every vertex by ``delta`` except those that would fold a triangle."""
    moving = np.ones(len(p), dtype=bool)
    while True:
        trial = p.copy()
        trial[moving] = _normalize(p[moving] + delta[moving])
        bad = flipped_faces(mesh, trial)
        if not bad.any():
            return trial
        frozen = mesh.faces[bad].ravel()
        if not moving[frozen].any():
            return trial
        moving[frozen] = False


def _relax(mesh, weights, deg, precond, p, balance, max_iters, tol, step):
    """Energy-descent sweeps at fixed balancing measure; returns (p, history)."""
    energy = harmonic_energy(weights, p)
    history = [energy]
    alpha = step
    while len(history) <= max_iters:
        grad = weights @ p - deg[:, None] * p
        grad -= np.sum(grad * p, axis=1, keepdims=True) * p
        accepted = False
        while alpha >= _MIN_STEP:
            trial = _safe_step(mesh, p, alpha * grad / precond[:, None])
            trial = mobius_center(trial, balance)
            e_trial = harmonic_energy(weights, trial)
            if e_trial <= energy and not flipped_faces(mesh, trial).any():
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        decrease = (energy - e_trial) / max(abs(energy), 1e-300)
        p, energy = trial, e_trial
        history.append(energy)
        if decrease < tol:
            break
        alpha = min(2.0 * alpha, step)
    return p, history


def parameterize(mesh: TriMesh, max_iters: int = 10000, tol: float = 1e-7, step: float = 1.0,
                 clamp_cotangents: bool = False, balance_passes: int = 2,
                 repair_rounds: int = 200, check_topology: bool = True) -> SphericalMap:
    """Bijective map of a closed genus-0 mesh onto the unit sphere.

    Parameters
    ----------
    mesh : TriMesh
        Closed, consistently oriented genus-0 surface.
    max_iters : int
        Cap on the total number of accepted sweeps over all passes.
    tol : float
        A pass stops once a sweep lowers the energy by less than this
        relative amount, or when no step size down to 2**-20 lowers it.
    step : float
        Initial (and largest) Jacobi step, in (0, 1].
    balance_passes : int
        Number of relaxations. The first balances a measure estimated from the
        radial projection; each later pass re-estimates it from the previous
        result (see :func:`balance_weights`) and relaxes again from there.

    Returns
    -------
    SphericalMap
        Unit-sphere positions indexed like ``mesh``. ``energy_history`` is the
        trace of the last pass, which never increases.

    Raises :class:`NotGenusZero` / :class:`NonManifold` on bad input and
    :class:`NoBijectiveMap` if folds cannot be removed.
    """
    if not 0 < step <= 1:
        raise ValueError("step must lie in (0, 1]")
    if check_topology:
        _check_topology(mesh)
    weights = cotangent_weights(mesh, clamp=clamp_cotangents)
    deg = np.asarray(weights.sum(axis=1)).ravel()
    # Jacobi scaling; guard vertices whose cotangents cancel
    precond = np.maximum(np.asarray(abs(weights).sum(axis=1)).ravel(), 1e-12)

    area = mesh.one_ring_areas()
    centroid = (area / area.sum()) @ mesh.vertices
    p = mesh.vertices - centroid
    lengths = np.linalg.norm(p, axis=1, keepdims=True)
    if np.any(lengths == 0):
        raise NoBijectiveMap("a vertex coincides with the surface centroid")
    p = p / lengths
    if flipped_faces(mesh, p).any():
        p = _repair_flips(mesh, p, repair_rounds)

    used = 0
    history: list[float] = []
    for _ in range(max(1, balance_passes)):
        balance = balance_weights(mesh, p)
        p = mobius_center(p, balance)
        if flipped_faces(mesh, p).any():
            p = mobius_center(_repair_flips(mesh, p, repair_rounds), balance)
        p, history = _relax(mesh, weights, deg, precond, p, balance,
                            max_iters - used, tol, step)
        used += len(history) - 1

    if flipped_faces(mesh, p).any():
        raise NoBijectiveMap("flipped faces remain after relaxation")
    log.debug("parameterize: %d sweeps, energy %.6g", used, history[-1])
    return SphericalMap(positions=p, iterations_used=used, final_energy=history[-1],
                        energy_history=history)


def area_distortion(mesh: TriMesh, smap: SphericalMap | np.ndarray) -> AreaDistortionMap:
    """Per-face and per-vertex log ratio of normalized spherical to input area.

    Both area sets are normalized to unit total, so uniform scaling of either
    side cancels. The vertex value is the log ratio of one-ring sums.
    """
    pos = smap.positions if isinstance(smap, SphericalMap) else np.asarray(smap, dtype=float)
    if pos.shape != mesh.vertices.shape:
        raise ConnectivityMismatch(f"map has {len(pos)} positions for {mesh.n_vertices} vertices")
    a_in = mesh.face_areas()
    a_sph = mesh.face_areas(pos)
    a_in = np.maximum(a_in, 1e-12 * a_in.mean())
    a_sph = np.maximum(a_sph, 1e-12 * a_sph.mean())
    a_in = a_in / a_in.sum()
    a_sph = a_sph / a_sph.sum()
    eps_face = np.log(a_sph / a_in)
    eps_vertex = np.log(mesh.vertex_face_sum(a_sph) / mesh.vertex_face_sum(a_in))
    return AreaDistortionMap(epsilon_vertex=eps_vertex, epsilon_face=eps_face)
