"""Fixed-layout feature vectors and the three-layer malignancy classifier.

Mesh features are 1000 vertices x 96 values, where each vertex holds three
32-wide blocks (nodule, spiculation, lobulation) one after the other, so
value ``k`` of branch ``b`` at vertex ``v`` sits at ``96 * v + 32 * b + k``.
The hybrid input prepends a flattened 256x4x4x4 encoder block.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BadMagic, BranchWidthMismatch, DimMismatch, InvalidInput, IoError, LengthMismatch,
                     MalformedFile, NonFiniteWeights, TruncatedFile, VersionUnsupported)
from .surface.mesh import TriMesh

N_VERTICES = 1000
BRANCH_WIDTH = 32
N_BRANCHES = 3
BRANCHES = ("nodule", "spiculation", "lobulation")
PER_VERTEX = BRANCH_WIDTH * N_BRANCHES  # 96
MESH_FEATURES = N_VERTICES * PER_VERTEX  # 96000
ENCODER_SHAPE = (256, 4, 4, 4)
ENCODER_FEATURES = int(np.prod(ENCODER_SHAPE))  # 16384
HYBRID_FEATURES = ENCODER_FEATURES + MESH_FEATURES  # 112384
HIDDEN = (512, 128)
N_CLASSES = 2
MESH_ONLY_DIMS = (MESH_FEATURES, *HIDDEN, N_CLASSES)
HYBRID_DIMS = (HYBRID_FEATURES, *HIDDEN, N_CLASSES)

DEEP = "deep"
GEOMETRIC_STANDIN = "geometric-standin"

MAGIC = b"CIRW"
FORMAT_VERSION = 1


def feature_index(v: int, branch: int, k: int) -> int:
    """Flat position of value ``k`` of ``branch`` at vertex ``v``."""
    if not (0 <= v < N_VERTICES and 0 <= branch < N_BRANCHES and 0 <= k < BRANCH_WIDTH):
        raise IndexError((v, branch, k))
    return PER_VERTEX * v + BRANCH_WIDTH * branch + k


@dataclass(frozen=True, eq=False)
class MeshFeatureVector:
    values: np.ndarray
    vertex_count_actual: int
    feature_source: str = DEEP

    def __post_init__(self):
        if self.values.shape != (MESH_FEATURES,):
            raise LengthMismatch(f"mesh features must have {MESH_FEATURES} values")


@dataclass(frozen=True, eq=False)
class HybridFeatureVector:
    values: np.ndarray
    feature_source: str = DEEP

    @property
    def encoder(self) -> np.ndarray:
        return self.values[:ENCODER_FEATURES]

    @property
    def mesh(self) -> np.ndarray:
        return self.values[ENCODER_FEATURES:]


def assemble_mesh_features(branches, feature_source: str = DEEP) -> MeshFeatureVector:
    """Pack three per-vertex (V, 32) blocks into the 96000-long layout.

    Vertices are taken in order; beyond the first 1000 they are dropped and
    below 1000 the tail is zero.
    """
    if len(branches) != N_BRANCHES:
        raise BranchWidthMismatch(f"expected {N_BRANCHES} branches, got {len(branches)}")
    blocks = [np.asarray(b, dtype=np.float64) for b in branches]
    n = blocks[0].shape[0] if blocks[0].ndim == 2 else -1
    for i, b in enumerate(blocks):
        if b.ndim != 2 or b.shape[1] != BRANCH_WIDTH:
            raise BranchWidthMismatch(f"branch {i} must be (V, {BRANCH_WIDTH}), got {b.shape}")
        if b.shape[0] != n:
            raise BranchWidthMismatch("branches disagree on vertex count")
    used = min(n, N_VERTICES)
    grid = np.zeros((N_VERTICES, N_BRANCHES, BRANCH_WIDTH))
    for i, b in enumerate(blocks):
        grid[:used, i, :] = b[:used]
    return MeshFeatureVector(grid.ravel(), used, feature_source)


STANDIN_COLUMNS = ("x", "y", "z", "nx", "ny", "nz", "epsilon",
                   "is_base", "is_spiculation", "is_lobulation", "one_ring_area", "mean_edge_length")


def geometric_branches(mesh: TriMesh, epsilon, vertex_class) -> list[np.ndarray]:
    """Per-vertex geometric stand-in for the learned decoder features.

    Each vertex gets the 12 values in :data:`STANDIN_COLUMNS` (zero-padded to
    32). The nodule branch carries them for every vertex; the spiculation and
    lobulation branches carry them only on vertices of that class.
    """
    eps = np.asarray(epsilon, dtype=np.float64)
    cls = np.asarray(vertex_class)
    if eps.shape != (mesh.n_vertices,) or cls.shape != (mesh.n_vertices,):
        raise BranchWidthMismatch("epsilon and class need one value per vertex")
    onehot = np.eye(3)[cls.astype(np.int64)]
    cols = np.column_stack([mesh.vertices, mesh.vertex_normals(), eps, onehot,
                            mesh.one_ring_areas(), mesh.mean_edge_length_per_vertex()])
    block = np.zeros((mesh.n_vertices, BRANCH_WIDTH))
    block[:, :cols.shape[1]] = cols
    out = [block]
    for code in (1, 2):
        out.append(np.where((cls == code)[:, None], block, 0.0))
    return out


def concat_hybrid(encoder_feats, mesh_feats: MeshFeatureVector) -> HybridFeatureVector:
    enc = np.asarray(encoder_feats, dtype=np.float64).ravel()
    if enc.shape != (ENCODER_FEATURES,):
        raise LengthMismatch(f"encoder block must have {ENCODER_FEATURES} values, got {enc.size}")
    return HybridFeatureVector(np.concatenate([enc, mesh_feats.values]), mesh_feats.feature_source)


# -- classifier -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MlpWeights:
    """Three dense layers; ``weights[i]`` is (out, in) and ``biases[i]`` is (out,)."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.ascontiguousarray(w, dtype=np.float32) for w in self.weights)
        bs = tuple(np.ascontiguousarray(b, dtype=np.float32).ravel() for b in self.biases)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        if len(ws) != 3 or len(bs) != 3:
            raise DimMismatch("the classifier has exactly three layers")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimMismatch(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise DimMismatch(f"layer {i} expects {w.shape[1]} inputs, previous gives {ws[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteWeights(f"layer {i} has non-finite parameters")
        if ws[-1].shape[0] != N_CLASSES:
            raise DimMismatch(f"output layer must have width {N_CLASSES}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @classmethod
    def zeros(cls, dims=MESH_ONLY_DIMS) -> "MlpWeights":
        return cls(tuple(np.zeros((o, i), np.float32) for i, o in zip(dims[:-1], dims[1:])),
                   tuple(np.zeros(o, np.float32) for o in dims[1:]))

    @classmethod
    def random(cls, rng: np.random.Generator, dims=MESH_ONLY_DIMS) -> "MlpWeights":
        """He-style random initialisation, mainly for tests and demos."""
        ws = tuple((rng.standard_normal((o, i)) * np.sqrt(2.0 / i)).astype(np.float32)
                   for i, o in zip(dims[:-1], dims[1:]))
        bs = tuple((0.01 * rng.standard_normal(o)).astype(np.float32) for o in dims[1:])
        return cls(ws, bs)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def mlp_forward(x, w: MlpWeights) -> dict:
    """ReLU, ReLU, softmax forward pass accumulated in float64."""
    h = np.asarray(getattr(x, "values", x), dtype=np.float64).ravel()
    if h.size != w.dims[0]:
        raise DimMismatch(f"input has {h.size} values, weights expect {w.dims[0]}")
    if not np.all(np.isfinite(h)):
        raise InvalidInput("input features must be finite")
    for i, (wi, bi) in enumerate(zip(w.weights, w.biases)):
        h = wi.astype(np.float64) @ h + bi.astype(np.float64)
        if i < 2:
            h = np.maximum(h, 0.0)
    p = softmax(h)
    return {"p_benign": float(p[0]), "p_malignant": float(p[1])}


def prediction_report(probs: dict, threshold: float = 0.5, feature_source: str = DEEP) -> dict:
    p = probs["p_malignant"]
    return {
        "p_malignant": p,
        "p_benign": probs["p_benign"],
        "threshold": float(threshold),
        "label": int(p >= threshold),
        "feature_source": feature_source,
    }


# -- weight files -----------------------------------------------------------
# "CIRW", u32 version, u32 layer count, then per layer u32 rows, u32 cols,
# rows*cols float32 weights (row-major) and rows float32 biases; little-endian.

def save_weights(w: MlpWeights, path) -> None:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(w.weights))]
    for wi, bi in zip(w.weights, w.biases):
        parts.append(struct.pack("<II", *wi.shape))
        parts.append(wi.astype("<f4").tobytes(order="C"))
        parts.append(bi.astype("<f4").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_weights(path) -> MlpWeights:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if data[:4] != MAGIC:
        if len(data) < 4:
            raise TruncatedFile(f"{path}: shorter than the magic number")
        raise BadMagic(f"{path}: magic {data[:4]!r} is not {MAGIC!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFile(f"{path}: needs {pos + n} bytes, has {len(data)}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, n_layers = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path}: format version {version}")
    ws, bs = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", take(8))
        ws.append(np.frombuffer(take(4 * rows * cols), dtype="<f4").reshape(rows, cols))
        bs.append(np.frombuffer(take(4 * rows), dtype="<f4"))
    if pos != len(data):
        raise MalformedFile(f"{path}: {len(data) - pos} trailing bytes")
    return MlpWeights(tuple(ws), tuple(bs))
