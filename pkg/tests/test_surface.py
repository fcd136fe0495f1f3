import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikemesh import phantoms
from spikemesh.errors import EmptyMask, MalformedFile, OpenSurface
from spikemesh.surface import (TriMesh, largest_component, marching_cubes, marching_cubes_array,
                               mesh_stats, read_obj, read_ply, taubin_smooth, write_obj, write_ply)
from spikemesh.surface.marching_cubes import TRI_TABLE
from spikemesh.volume_io import MaskVolume


def _check_invariants(mesh):
    assert mesh.faces.min() >= 0 and mesh.faces.max() < mesh.n_vertices
    assert mesh.is_closed() and mesh.is_manifold() and mesh.is_consistently_oriented()
    assert mesh.face_areas().min() > 1e-12


def test_single_voxel_euler():
    labels = np.zeros((1, 1, 1), np.uint8)
    labels[0, 0, 0] = 1
    m = marching_cubes(MaskVolume(labels))
    s = mesh_stats(m)
    assert s["euler"] == s["V"] - s["E"] + s["F"] == 2 and s["genus"] == 0
    _check_invariants(m)


def test_empty_mask():
    with pytest.raises(EmptyMask):
        marching_cubes(MaskVolume(np.zeros((3, 3, 3))))


def test_block_volume_converges():
    def block_volume(scale):
        lab = np.zeros((2 * scale + 2,) * 3, np.uint8)
        lab[1:-1, 1:-1, 1:-1] = 1
        return mesh_stats(marching_cubes(MaskVolume(lab, (1.0 / scale,) * 3)))["volume"]

    v1, v2 = block_volume(1), block_volume(2)
    assert abs(v1 - 8) <= 0.3 * 8
    assert abs(v2 - 8) < abs(v1 - 8)


def test_physical_coordinates():
    lab = np.zeros((4, 4, 4), np.uint8)
    lab[1:3, 1:3, 1:3] = 1
    m = marching_cubes(MaskVolume(lab, (0.5, 1.0, 2.0), (10.0, 20.0, 30.0)))
    lo, hi = m.vertices.min(0), m.vertices.max(0)
    # the surface sits half a voxel outside the foreground centres
    assert np.allclose(lo, [10 + 0.5 * 0.5, 20 + 0.5, 30 + 1.0])
    assert np.allclose(hi, [10 + 2.5 * 0.5, 20 + 2.5, 30 + 5.0])


def test_table_covers_all_cases():
    assert len(TRI_TABLE) == 256 and TRI_TABLE[0] == [] and TRI_TABLE[255] == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.floats(0.2, 0.8))
def test_fuzz_random_masks_closed(seed, n, density):
    lab = (np.random.default_rng(seed).random((n, n, n)) < density).astype(np.uint8)
    if not lab.any():
        lab[0, 0, 0] = 1
    m = marching_cubes(MaskVolume(lab))
    _check_invariants(m)
    assert m.signed_volume() > 0
    s = mesh_stats(m)
    assert float(s["genus"]).is_integer()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_blob_volume_ratio(seed):
    vol = phantoms.blob_mask(np.random.default_rng(seed), radius=4.0, spacing=1.0)
    m = marching_cubes(vol)
    ratio = mesh_stats(m)["volume"] / vol.labels.sum()
    assert 0.5 <= ratio <= 1.5
    fine = phantoms.blob_mask(np.random.default_rng(seed), radius=4.0, spacing=0.5)
    ratio_fine = mesh_stats(marching_cubes(fine))["volume"] / (fine.labels.sum() * 0.125)
    assert abs(ratio_fine - 1) < abs(ratio - 1)


def test_simply_connected_masks_are_genus_zero():
    for vol in (phantoms.sphere_mask(4, 1.0), phantoms.spiked_sphere_mask(4, 1.0, cones=[((1, 0, 0), 3, 20)])):
        assert mesh_stats(marching_cubes(vol))["genus"] == 0


def test_cube_stats():
    s = mesh_stats(phantoms.cube_mesh())
    assert (s["V"], s["F"], s["genus"]) == (8, 12, 0)
    assert s["volume"] == pytest.approx(1.0, abs=1e-12)
    assert s["surface_area"] == pytest.approx(6.0, abs=1e-12)


def test_icosphere_stats():
    s = mesh_stats(phantoms.icosphere(3, 1.0))
    assert abs(s["surface_area"] / (4 * np.pi) - 1) < 0.01
    assert abs(s["volume"] / (4 * np.pi / 3) - 1) < 0.01


def test_torus_genus_and_open_surface():
    s = mesh_stats(phantoms.torus_mesh())
    assert s["euler"] == 0 and s["genus"] == 1
    with pytest.raises(OpenSurface):
        mesh_stats(phantoms.plane_grid())
    assert mesh_stats(phantoms.plane_grid(), require_closed=False)["genus"] is None


def test_largest_component():
    small = phantoms.icosphere(2, 1.0)  # 320 faces
    tiny = phantoms.icosphere(1, 1.0, center=(5, 0, 0))  # 80 faces
    merged = phantoms.merge_meshes(tiny, small)
    merged.channels["tag"] = np.arange(merged.n_vertices)
    keep = largest_component(merged)
    assert keep.n_faces == 320
    # channels follow their vertices through the reindexing
    assert np.array_equal(keep.vertices, merged.vertices[keep.channels["tag"]])
    assert np.array_equal(keep.vertices, small.vertices)
    same = largest_component(small)
    assert np.array_equal(same.faces, small.faces)


def test_taubin_keeps_connectivity_and_volume():
    m = marching_cubes(phantoms.sphere_mask(6, 1.0))
    s = taubin_smooth(m, 30)
    assert np.array_equal(s.faces, m.faces)
    assert abs(s.signed_volume() / m.signed_volume() - 1) < 0.05
    r = np.linalg.norm(s.vertices - s.vertices.mean(0), axis=1)
    r0 = np.linalg.norm(m.vertices - m.vertices.mean(0), axis=1)
    assert r.std() < r0.std()


# -- file formats -----------------------------------------------------------

def test_obj_round_trip(tmp_path):
    m = phantoms.icosphere(2, 3.7, center=(1e3, -2.0, 0.125))
    write_obj(m, tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.faces, m.faces)
    assert np.allclose(back.vertices, m.vertices, rtol=1e-6, atol=0)


def test_obj_quad_rejected(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MalformedFile):
        read_obj(p)


def test_obj_slash_and_negative_indices(tmp_path):
    p = tmp_path / "s.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n")
    assert read_obj(p).faces.tolist() == [[0, 1, 2]]


def test_ply_colors_and_channels(tmp_path):
    m = phantoms.regular_tetrahedron()
    m.channels["class"] = np.array([0, 1, 2, 0], dtype=np.uint8)
    m.channels["epsilon"] = np.array([0.1, -0.5, -0.2, 0.3])
    write_ply(m, tmp_path / "t.ply")
    text = (tmp_path / "t.ply").read_text().split("end_header\n")[1].splitlines()
    colors = [tuple(int(t) for t in line.split()[5:8]) for line in text[:4]]
    assert colors == [(255, 255, 255), (255, 0, 0), (0, 0, 255), (255, 255, 255)]
    back = read_ply(tmp_path / "t.ply")
    assert np.array_equal(back.channels["class"], m.channels["class"])
    assert np.array_equal(back.channels["epsilon"], m.channels["epsilon"])
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)


def test_trimesh_rejects_bad_input():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 1]])
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 2]], {"c": np.zeros(2)})


def test_marching_cubes_array_linear_interpolation():
    f = np.zeros((3, 3, 3))
    f[1, 1, 1] = 1.0
    m = marching_cubes_array(f, iso=0.25)
    # the 0.25 level is crossed 0.75 voxels out from the peak on every edge
    d = np.abs(m.vertices - 1.0).max(axis=1)
    assert np.allclose(d, 0.75)
