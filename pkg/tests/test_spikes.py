import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import csgraph

from spikemesh import phantoms
from spikemesh.errors import GridTooCoarse
from spikemesh.metrics import jaccard
from spikemesh.pipeline import run_annotation
from spikemesh.spherical import AreaDistortionMap
from spikemesh.spikes import (Spike, SpikeOptions, annotate, classify_spike, detect_spikes, inside_mask,
                              points_to_mesh_distance, voxelize_annotation)
from spikemesh.volume_io import MaskVolume


def _adm(mesh):
    return AreaDistortionMap(mesh.channels["epsilon"], np.zeros(mesh.n_faces))


def _spike(n=20, height=5.0, radius=1.0):
    return Spike(np.arange(n), 0, height, radius, float(np.degrees(2 * np.arctan2(radius, height))), -1.0, -2.0)


# -- detection on pipeline phantoms ------------------------------------------

def test_sphere_has_no_spikes(sphere_result):
    assert np.max(np.abs(sphere_result.mesh.channels["epsilon"])) < 0.05
    assert detect_spikes(sphere_result.mesh, _adm(sphere_result.mesh)) == []
    s = sphere_result.annotation.summary
    assert (s["n_spiculations"], s["n_lobulations"]) == (0, 0)
    assert (s["base_area_fraction"], s["spiculation_area_fraction"], s["lobulation_area_fraction"]) == (1, 0, 0)


def test_cone_single_spike_at_tip(cone_result):
    mesh = cone_result.mesh
    spikes = detect_spikes(mesh, _adm(mesh))
    assert len(spikes) == 1
    tip = mesh.vertices[np.argmax(mesh.vertices[:, 2])]
    assert np.linalg.norm(mesh.vertices[spikes[0].apex_id] - tip) <= 1.0
    assert classify_spike(spikes[0]) == "spiculation"


def test_cone_and_bump(cone_bump_result):
    mesh, ann = cone_bump_result.mesh, cone_bump_result.annotation
    assert len(ann.spikes) == 2
    a, b = (set(s.vertex_ids.tolist()) for s in ann.spikes)
    assert not a & b
    s = ann.summary
    assert (s["n_spiculations"], s["n_lobulations"]) == (1, 1)
    by_cls = {sp.cls: sp for sp in ann.spikes}
    # the cone points up, the bump down
    assert mesh.vertices[by_cls["spiculation"].apex_id, 2] > 8
    assert mesh.vertices[by_cls["lobulation"].apex_id, 2] < -8
    assert np.all(ann.vertex_class[by_cls["spiculation"].vertex_ids] == 1)
    assert np.all(ann.vertex_class[by_cls["lobulation"].vertex_ids] == 2)


def test_bump_is_lobulation(bump_result):
    (spike,) = bump_result.annotation.spikes
    assert spike.cls == "lobulation"


# -- classification -----------------------------------------------------------

def test_classify_rules():
    assert classify_spike(_spike(height=1 / np.tan(np.radians(15)))) == "spiculation"  # 30 degrees
    assert classify_spike(_spike(height=1.0)) == "lobulation"  # 90 degrees
    assert classify_spike(_spike(n=3)) == "other"
    assert classify_spike(_spike(height=0.5, radius=0.1)) == "other"
    boundary = _spike()
    boundary.apex_angle_deg = 65.0
    assert classify_spike(boundary, theta_spic_deg=65.0) == "lobulation"


def test_three_vertex_component_is_base():
    mesh = phantoms.icosphere(2)
    eps = np.full(mesh.n_vertices, 0.1)
    f = mesh.faces[0]
    eps[f] = -0.5
    adm = AreaDistortionMap(eps, np.zeros(mesh.n_faces))
    ann = annotate(mesh, adm)
    assert len(ann.spikes) == 1 and ann.spikes[0].cls == "other"
    assert np.all(ann.vertex_class == 0)
    assert ann.summary["n_other"] == 1


def test_options_validation():
    with pytest.raises(ValueError):
        SpikeOptions(noise_floor=0.1)
    with pytest.raises(ValueError):
        SpikeOptions(theta_spic_deg=200)


# -- structural properties -------------------------------------------------

def _random_field(seed):
    mesh = phantoms.icosphere(3)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(4, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    eps = 0.05 - np.max(np.exp(8 * (mesh.vertices @ d.T - 1)), axis=1) * rng.uniform(0.1, 1.0, 4).max()
    return mesh, AreaDistortionMap(eps, np.zeros(mesh.n_faces))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spikes_disjoint_connected_sorted(seed):
    mesh, adm = _random_field(seed)
    spikes = detect_spikes(mesh, adm)
    seen = set()
    for s in spikes:
        ids = set(s.vertex_ids.tolist())
        assert not ids & seen
        seen |= ids
        sub = mesh.adjacency[s.vertex_ids][:, s.vertex_ids]
        assert csgraph.connected_components(sub, directed=False)[0] == 1
        assert s.apex_id in ids and adm.epsilon_vertex[s.apex_id] == adm.epsilon_vertex[s.vertex_ids].min()
        assert s.height_mm >= 0 and s.base_radius_mm > 0 and 0 < s.apex_angle_deg < 180
    mins = [s.min_epsilon for s in spikes]
    assert mins == sorted(mins)
    # every sub-threshold vertex is in exactly one spike
    assert seen == set(np.flatnonzero(adm.epsilon_vertex <= -0.02).tolist())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-0.5, -0.02), st.floats(0.0, 0.5))
def test_noise_floor_monotone(seed, floor, extra):
    mesh, adm = _random_field(seed)
    hi = sum(len(s.vertex_ids) for s in detect_spikes(mesh, adm, noise_floor=floor))
    lo = sum(len(s.vertex_ids) for s in detect_spikes(mesh, adm, noise_floor=floor - extra))
    assert lo <= hi


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_rigid_and_scale_invariance(seed, scale):
    mesh, adm = _random_field(seed)
    base = annotate(mesh, adm)
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    moved = mesh.copy(vertices=mesh.vertices @ q.T + [3.0, -1.0, 2.0])
    assert np.array_equal(annotate(moved, adm).vertex_class, base.vertex_class)
    scaled = annotate(mesh.copy(vertices=mesh.vertices * scale), adm, SpikeOptions(min_height_mm=0))
    ref = annotate(mesh, adm, SpikeOptions(min_height_mm=0))
    for a, b in zip(ref.spikes, scaled.spikes):
        assert b.height_mm == pytest.approx(a.height_mm * scale, rel=1e-6, abs=1e-9)
        assert b.base_radius_mm == pytest.approx(a.base_radius_mm * scale, rel=1e-6)
        assert abs(b.apex_angle_deg - a.apex_angle_deg) < 1e-6
    assert np.array_equal(scaled.vertex_class, ref.vertex_class)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_summary_consistent(seed):
    mesh, adm = _random_field(seed)
    ann = annotate(mesh, adm)
    s = ann.summary
    assert s["n_spiculations"] == sum(sp.cls == "spiculation" for sp in ann.spikes)
    assert s["n_lobulations"] == sum(sp.cls == "lobulation" for sp in ann.spikes)
    total = s["base_area_fraction"] + s["spiculation_area_fraction"] + s["lobulation_area_fraction"]
    assert abs(total - 1) < 1e-9
    assert len(ann.vertex_class) == mesh.n_vertices
    assert set(np.unique(ann.vertex_class)) <= {0, 1, 2}


# -- voxelization ---------------------------------------------------------------

def _winding_inside(mesh, pts):
    """Generalized winding number (solid angle sum), independent of ray casting."""
    p0, p1, p2 = mesh.face_vectors()
    out = []
    for q in pts:
        a, b, c = p0 - q, p1 - q, p2 - q
        la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
        num = np.einsum("ij,ij->i", a, np.cross(b, c))
        den = la * lb * lc + np.einsum("ij,ij->i", a, b) * lc + np.einsum("ij,ij->i", b, c) * la \
            + np.einsum("ij,ij->i", c, a) * lb
        out.append(np.sum(2 * np.arctan2(num, den)) / (4 * np.pi) > 0.5)
    return np.array(out)


def test_inside_mask_matches_winding_number():
    mesh = phantoms.random_star_mesh(np.random.default_rng(4), subdivisions=2)
    grid = MaskVolume(np.zeros((9, 9, 9)), (0.3, 0.3, 0.3), (-1.2, -1.2, -1.2))
    inside = inside_mask(mesh, grid)
    idx = np.argwhere(np.ones(grid.dims, bool))
    pts = np.asarray(grid.origin) + idx * 0.3
    assert np.array_equal(inside[tuple(idx.T)], _winding_inside(mesh, pts))


def test_points_to_mesh_distance_cube():
    mesh = phantoms.cube_mesh(2.0)
    pts = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 2.5], [3.0, 3.0, 1.0], [1.0, 1.0, -0.1]])
    d = points_to_mesh_distance(pts, mesh, radius=2.0)
    assert np.allclose(d[[0, 2, 3]], [1.0, np.sqrt(2.0), 0.1])
    assert d[1] == pytest.approx(0.5)
    assert np.isinf(points_to_mesh_distance(pts[:1], mesh, radius=0.5)[0])


def test_blob_round_trip():
    vol = phantoms.blob_mask(np.random.default_rng(0), radius=8.0, spacing=1.0)
    res = run_annotation(vol)
    assert jaccard(vol.labels != 0, res.masks.labels != 0) >= 0.9
    counts = np.bincount(res.masks.labels.ravel(), minlength=4)
    assert counts.sum() == res.masks.labels.size and len(counts) == 4


def test_cone_voxels_spiculation(cone_result, sphere_result):
    assert (cone_result.masks.labels == 2).any()
    assert not (sphere_result.masks.labels == 2).any()


@pytest.mark.parametrize("c0, c1, expected", [(0, 1, 2), (2, 0, 3), (2, 1, 2), (0, 0, 1)])
def test_tie_priority(c0, c1, expected):
    mesh = phantoms.cube_mesh(4.0)
    mesh = mesh.copy(vertices=mesh.vertices - 2.0)
    ann = annotate(mesh, AreaDistortionMap(np.full(8, 0.1), np.zeros(12)))
    ann.vertex_class[:] = 0
    ann.vertex_class[[0, 1]] = c0, c1
    # voxel (0, -1.9, -1.9) is equidistant from corners 0 and 1 and 0.1 from the surface
    grid = MaskVolume(np.zeros((7, 9, 9)), (0.5, 0.5, 0.5), (-1.5, -1.9, -1.9))
    out = voxelize_annotation(ann, mesh, grid)
    assert out.labels[3, 0, 0] == expected


def test_grid_too_coarse():
    mesh = phantoms.icosphere(2, 1.0)
    ann = annotate(mesh, AreaDistortionMap(np.zeros(mesh.n_vertices), np.zeros(mesh.n_faces)))
    with pytest.raises(GridTooCoarse):
        voxelize_annotation(ann, mesh, MaskVolume(np.zeros((4, 4, 4)), (1.0, 1.0, 1.0), (-2, -2, -2)))
