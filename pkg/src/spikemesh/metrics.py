"""Loss terms and evaluation metrics for segmentation, meshes and malignancy.

All reductions use :func:`math.fsum` (or exact integer counts), so results do
not depend on summation order and are bit-stable across runs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from .errors import (DegenerateLabels, DimMismatch, EmptySet, InvalidInput, MissingComponent,
                     ShapeMismatch)
from .surface.mesh import TriMesh
from .volume_io import MaskVolume

PROB_CLAMP = 1e-7


# -- point sets -------------------------------------------------------------

def _points(x, name: str) -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptySet(f"{name} is empty")
    if not np.all(np.isfinite(pts)):
        raise InvalidInput(f"{name} has non-finite coordinates")
    return pts


def _nearest_sq(src: np.ndarray, dst: np.ndarray) -> list[float]:
    """Squared distance from each ``src`` point to its nearest ``dst`` point.

    The tree only proposes candidates; every candidate within rounding of the
    best is re-measured with the same expression, so the result is the exact
    minimum of ``sum((a - b) ** 2)`` over ``dst``.
    """
    tree = cKDTree(dst)
    d, _ = tree.query(src, k=1)
    out = []
    for p, r in zip(src, np.atleast_1d(d)):
        cand = tree.query_ball_point(p, r * (1 + 1e-9) + 1e-12)
        diff = dst[cand] - p
        out.append(float(np.min(np.sum(diff * diff, axis=1))))
    return out


def chamfer_weighted_symmetric(a, b) -> float:
    """Mean squared nearest-neighbour distance from a to b plus from b to a."""
    pa, pb = _points(a, "A"), _points(b, "B")
    ab = _nearest_sq(pa, pb)
    ba = _nearest_sq(pb, pa)
    return math.fsum(ab) / len(ab) + math.fsum(ba) / len(ba)


# -- volumes ----------------------------------------------------------------

def jaccard(a: MaskVolume | np.ndarray, b: MaskVolume | np.ndarray, class_id: int | None = None) -> float:
    """Intersection over union of ``label == class_id`` (``None``: any nonzero).

    Two empty sets give 1.0.
    """
    la = a.labels if isinstance(a, MaskVolume) else np.asarray(a)
    lb = b.labels if isinstance(b, MaskVolume) else np.asarray(b)
    if la.shape != lb.shape:
        raise DimMismatch(f"dims {la.shape} vs {lb.shape}")
    if class_id is None:
        ma, mb = la != 0, lb != 0
    else:
        ma, mb = la == class_id, lb == class_id
    union = int(np.count_nonzero(ma | mb))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(ma & mb)) / union


# -- mesh regularizers --------------------------------------------------------

def laplacian_loss(mesh: TriMesh) -> float:
    """Mean over vertices of the squared offset from the neighbour average."""
    adj = mesh.adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    used = deg > 0
    delta = mesh.vertices[used] - (adj @ mesh.vertices)[used] / deg[used, None]
    return math.fsum(np.sum(delta * delta, axis=1)) / int(used.sum())


def edge_loss(mesh: TriMesh) -> float:
    """Mean squared edge length over unique edges."""
    e = mesh.edges
    d = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    return math.fsum(np.sum(d * d, axis=1)) / len(e)


def normal_consistency_loss(mesh: TriMesh) -> float:
    """Mean of ``1 - cos`` between the two face normals across interior edges."""
    interior = np.flatnonzero(mesh.edge_face_counts == 2)
    if len(interior) == 0:
        return 0.0
    normals = mesh.face_normals()
    fe = mesh.face_edge_index.ravel()
    order = np.argsort(fe, kind="stable")
    faces_of_edge = (order // 3)
    starts = np.searchsorted(fe[order], interior)
    f0, f1 = faces_of_edge[starts], faces_of_edge[starts + 1]
    cos = np.clip(np.sum(normals[f0] * normals[f1], axis=1), -1.0, 1.0)
    return math.fsum(1.0 - cos) / len(interior)


# -- likelihood losses ------------------------------------------------------

def cross_entropy(probs, labels) -> float:
    """Mean negative log-likelihood of integer ``labels`` under ``probs`` (N, C)."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ShapeMismatch(f"probs {p.shape} vs labels {y.shape}")
    if len(y) == 0:
        raise ShapeMismatch("no items")
    if np.any((y < 0) | (y >= p.shape[1])) or not np.issubdtype(y.dtype, np.integer):
        raise ShapeMismatch("labels must be integer class indices")
    picked = np.clip(p[np.arange(len(y)), y], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return math.fsum(-np.log(picked)) / len(y)


def bce(p, y) -> float:
    """Binary cross entropy, mean over items; scalars are a single item."""
    pa = np.atleast_1d(np.asarray(p, dtype=np.float64))
    ya = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if pa.shape != ya.shape or pa.ndim != 1 or len(pa) == 0:
        raise ShapeMismatch(f"p {pa.shape} vs y {ya.shape}")
    if not np.all((ya == 0) | (ya == 1)):
        raise ShapeMismatch("targets must be 0 or 1")
    pc = np.clip(pa, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = -(ya * np.log(pc) + (1 - ya) * np.log1p(-pc))
    return math.fsum(terms) / len(terms)


@dataclass(frozen=True)
class LossWeights:
    w_bce: float = 1.0
    w_ce: float = 1.0
    w_chamfer_nodule: float = 1.0
    w_chamfer_spic: float = 1.0
    w_chamfer_lob: float = 1.0
    w_laplacian: float = 0.1
    w_edge: float = 1.0
    w_normal: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise InvalidInput(f"{name} must be finite and non-negative")


LOSS_COMPONENTS = ("bce", "ce", "chamfer_nodule", "chamfer_spic", "chamfer_lob",
                   "laplacian", "edge", "normal")


def total_loss(components: dict, weights: LossWeights | None = None) -> float:
    """Weighted sum of the eight named loss components."""
    w = weights or LossWeights()
    missing = [k for k in LOSS_COMPONENTS if k not in components]
    if missing:
        raise MissingComponent(f"missing loss components: {missing}")
    terms = []
    for k in LOSS_COMPONENTS:
        value = float(components[k])
        if not math.isfinite(value):
            raise InvalidInput(f"component {k} is not finite")
        terms.append(getattr(w, "w_" + k) * value)
    return math.fsum(terms)


# -- classification -----------------------------------------------------------

def _outcomes(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeMismatch(f"{len(s)} scores vs {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInput("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise InvalidInput("scores must be finite")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2)."""
    s, y = _outcomes(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative case")
    ranks = rankdata(s, method="average")
    u = math.fsum(ranks[y]) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def binary_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Confusion-matrix metrics with ``score >= threshold`` predicted positive.

    Sensitivity or specificity with an empty denominator is ``None``; F1 is 0.
    """
    s, y = _outcomes(scores, labels)
    pred = s >= threshold
    tp = int(np.count_nonzero(pred & y))
    tn = int(np.count_nonzero(~pred & ~y))
    fp = int(np.count_nonzero(pred & ~y))
    fn = int(np.count_nonzero(~pred & y))
    n = tp + tn + fp + fn
    f1_den = 2 * tp + fp + fn
    return {
        "tp": tp, "tn": tn, "fp": fp, "fn": fn,
        "accuracy": (tp + tn) / n if n else None,
        "sensitivity": tp / (tp + fn) if tp + fn else None,
        "specificity": tn / (tn + fp) if tn + fp else None,
        "f1": 2 * tp / f1_den if f1_den else 0.0,
    }


def binarize_rm(scores) -> np.ndarray:
    """Radiologist malignancy ratings 1-5 to binary labels (positive iff > 3)."""
    r = np.asarray(scores, dtype=np.float64)
    if np.any((r < 1) | (r > 5)):
        raise InvalidInput("malignancy ratings must lie in [1, 5]")
    return (r > 3).astype(np.int64)
