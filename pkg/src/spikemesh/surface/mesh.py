from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from ..errors import InvalidInput, OpenSurface


@dataclass(eq=False)
class TriMesh:
    """Indexed triangle surface with named per-vertex channels.

    Faces are counter-clockwise seen from outside, so face normals computed
    with the right-hand rule point outward.
    """

    vertices: np.ndarray
    faces: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.channels = {k: np.asarray(v) for k, v in self.channels.items()}
        self.validate_basic()

    def validate_basic(self):
        nv = len(self.vertices)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= nv:
                raise InvalidInput("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise InvalidInput("face with repeated vertex index")
        for name, values in self.channels.items():
            if len(values) != nv:
                raise InvalidInput(f"channel {name!r} has {len(values)} entries for {nv} vertices")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def copy(self, vertices=None) -> "TriMesh":
        return TriMesh(self.vertices.copy() if vertices is None else vertices,
                       self.faces.copy(), {k: v.copy() for k, v in self.channels.items()})

    # -- topology ---------------------------------------------------------

    @cached_property
    def half_edges(self) -> np.ndarray:
        """Directed edges ``(a, b)``, three per face, in face order."""
        f = self.faces
        return np.stack([f, np.roll(f, -1, axis=1)], axis=-1).reshape(-1, 2)

    @cached_property
    def _edge_table(self):
        he = self.half_edges
        und = np.sort(he, axis=1)
        edges, inverse, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.ravel(), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted lexicographically."""
        return self._edge_table[0]

    @property
    def edge_face_counts(self) -> np.ndarray:
        return self._edge_table[2]

    @property
    def face_edge_index(self) -> np.ndarray:
        """For each face, the indices into ``edges`` of its three edges."""
        return self._edge_table[1].reshape(-1, 3)

    def is_closed(self) -> bool:
        return bool(len(self.faces)) and bool(np.all(self.edge_face_counts == 2))

    def is_manifold(self) -> bool:
        return bool(np.all(self.edge_face_counts <= 2))

    def is_consistently_oriented(self) -> bool:
        # an orientable, consistently wound mesh never repeats a directed edge
        he = self.half_edges
        return len(np.unique(he, axis=0)) == len(he)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric vertex adjacency matrix (unit weights)."""
        e = self.edges
        n = self.n_vertices
        a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    @cached_property
    def face_adjacency(self) -> sp.csr_matrix:
        """Face-face adjacency through shared edges."""
        fe = self.face_edge_index.ravel()
        fid = np.repeat(np.arange(self.n_faces), 3)
        inc = sp.coo_matrix((np.ones(len(fe)), (fid, fe)), shape=(self.n_faces, len(self.edges))).tocsr()
        adj = (inc @ inc.T).tocsr()
        adj.setdiag(0)
        adj.eliminate_zeros()
        return adj

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    # -- geometry ---------------------------------------------------------

    def face_vectors(self, vertices=None):
        v = self.vertices if vertices is None else vertices
        p0, p1, p2 = (v[self.faces[:, i]] for i in range(3))
        return p0, p1, p2

    def face_cross(self, vertices=None) -> np.ndarray:
        p0, p1, p2 = self.face_vectors(vertices)
        return np.cross(p1 - p0, p2 - p0)

    def face_areas(self, vertices=None) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(vertices), axis=1)

    def face_normals(self, vertices=None) -> np.ndarray:
        c = self.face_cross(vertices)
        n = np.linalg.norm(c, axis=1, keepdims=True)
        return c / np.where(n > 0, n, 1.0)

    def vertex_face_sum(self, face_values: np.ndarray) -> np.ndarray:
        """Sum a per-face quantity onto each face's three vertices."""
        out = np.zeros(self.n_vertices)
        for i in range(3):
            np.add.at(out, self.faces[:, i], face_values)
        return out

    def one_ring_areas(self) -> np.ndarray:
        """Total area of the faces incident to each vertex."""
        return self.vertex_face_sum(self.face_areas())

    def vertex_normals(self) -> np.ndarray:
        c = self.face_cross()
        out = np.zeros_like(self.vertices)
        for i in range(3):
            np.add.at(out, self.faces[:, i], c)
        n = np.linalg.norm(out, axis=1, keepdims=True)
        return out / np.where(n > 0, n, 1.0)

    def mean_edge_length_per_vertex(self) -> np.ndarray:
        e = self.edges
        length = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        total = np.bincount(e[:, 0], length, self.n_vertices) + np.bincount(e[:, 1], length, self.n_vertices)
        deg = np.bincount(e.ravel(), minlength=self.n_vertices)
        return total / np.maximum(deg, 1)

    def signed_volume(self) -> float:
        p0, p1, p2 = self.face_vectors()
        return float(np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum() / 6.0)

    def submesh(self, face_ids) -> "TriMesh":
        """Mesh induced by ``face_ids`` with vertices reindexed in ascending order."""
        faces = self.faces[np.asarray(face_ids)]
        used = np.unique(faces)
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriMesh(self.vertices[used], remap[faces],
                       {k: v[used] for k, v in self.channels.items()})


def mesh_stats(mesh: TriMesh, require_closed: bool = True) -> dict:
    """Counts, Euler characteristic, genus, area and enclosed volume.

    Genus and volume only make sense on closed surfaces; with
    ``require_closed`` an open mesh raises :class:`OpenSurface`, otherwise
    those two entries are ``None``.
    """
    V, E, F = mesh.n_vertices, len(mesh.edges), mesh.n_faces
    euler = V - E + F
    closed = mesh.is_closed()
    if not closed and require_closed:
        raise OpenSurface("mesh has boundary edges; genus and volume are undefined")
    n_comp = csgraph.connected_components(mesh.adjacency, directed=False)[0] if V else 0
    genus = volume = None
    if closed:
        # total genus summed over components: euler = 2c - 2g
        genus = (2 * n_comp - euler) / 2
        genus = int(genus) if float(genus).is_integer() else genus
        volume = abs(mesh.signed_volume())
    return {
        "V": V, "E": E, "F": F, "euler": euler, "genus": genus, "components": int(n_comp),
        "surface_area": float(mesh.face_areas().sum()), "volume": volume,
    }


def largest_component(mesh: TriMesh) -> TriMesh:
    """Keep the face-connected component with the most faces (lowest label on ties)."""
    if mesh.n_faces == 0:
        return mesh.copy()
    n, labels = csgraph.connected_components(mesh.face_adjacency, directed=False)
    if n == 1:
        return mesh.submesh(np.arange(mesh.n_faces))
    counts = np.bincount(labels)
    keep = int(np.argmax(counts))
    return mesh.submesh(np.flatnonzero(labels == keep))
