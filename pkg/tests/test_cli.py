import json
import math

import numpy as np
import pytest

from spikemesh import phantoms
from spikemesh.cli import exit_code_for, main
from spikemesh.errors import InvalidInput, NoBijectiveMap, NonManifoldOutput
from spikemesh.malignancy import HYBRID_DIMS, MESH_FEATURES, MlpWeights, save_weights
from spikemesh.pipeline import PipelineConfig, load_config, parse_config
from spikemesh.volume_io import MaskVolume, read_nrrd, write_nrrd

from conftest import CONE


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def masks(tmp_path_factory):
    d = tmp_path_factory.mktemp("masks")
    paths = {"sphere": d / "sphere.nrrd", "cone": d / "cone.nrrd"}
    write_nrrd(phantoms.icosphere_mask(6.0, 0.5, subdivisions=3), paths["sphere"])
    write_nrrd(phantoms.spiked_sphere_mask(8.0, 0.5, cones=[CONE]), paths["cone"])
    empty = MaskVolume(np.zeros((8, 8, 8), np.uint8), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    paths["empty"] = d / "empty.nrrd"
    write_nrrd(empty, paths["empty"])
    return paths


@pytest.fixture(scope="module")
def sphere_out(masks, tmp_path_factory):
    out = tmp_path_factory.mktemp("sphere_out")
    assert main(["annotate", str(masks["sphere"]), "-o", str(out), "--features"]) == 0
    return out


@pytest.fixture(scope="module")
def cone_out(masks, tmp_path_factory):
    out = tmp_path_factory.mktemp("cone_out")
    assert main(["annotate", str(masks["cone"]), "-o", str(out)]) == 0
    return out


# -- annotate -------------------------------------------------------------------

def test_annotate_sphere(sphere_out):
    assert {"mesh.ply", "annotation.json", "masks.nrrd", "mesh_features.npz"} <= set(_files(sphere_out))
    report = json.loads((sphere_out / "annotation.json").read_text())
    assert report["summary"]["n_spiculations"] == 0
    assert report["config"] == PipelineConfig().to_dict()
    assert report["mesh"]["genus"] == 0
    for name in ("mesh.ply", "masks.nrrd"):
        head = (sphere_out / name).read_bytes()[:4000]
        assert b"theta_spic_deg=65.0" in head and b"noise_floor=-0.02" in head


def test_annotate_cone_has_label_2(cone_out):
    labels = read_nrrd(cone_out / "masks.nrrd").labels
    assert (labels == 2).any()
    assert set(np.unique(labels).tolist()) <= {0, 1, 2, 3}
    report = json.loads((cone_out / "annotation.json").read_text())
    assert report["summary"]["n_spiculations"] == 1


def test_rerun_with_embedded_config_is_identical(masks, sphere_out, tmp_path):
    assert main(["annotate", str(masks["sphere"]), "-o", str(tmp_path), "--features",
                 "-c", str(sphere_out / "annotation.json")]) == 0
    assert _files(tmp_path) == _files(sphere_out)


def test_annotate_input_errors(masks, tmp_path, capsys):
    assert main(["annotate", str(tmp_path / "missing.nrrd"), "-o", str(tmp_path / "o")]) == 2
    assert "missing.nrrd" in capsys.readouterr().err
    assert main(["annotate", str(masks["empty"]), "-o", str(tmp_path / "o")]) == 2
    assert main(["annotate", str(masks["sphere"]), "-o", str(tmp_path / "o"), "--set", "bogus=1"]) == 2
    assert main(["annotate", str(masks["sphere"]), "-o", str(tmp_path / "o"), "--noise-floor", "0.5"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["annotate", str(masks["sphere"])])
    assert exc.value.code == 2


def test_exit_code_mapping():
    assert exit_code_for(NoBijectiveMap("x")) == 3
    assert exit_code_for(NonManifoldOutput("x")) == 3
    assert exit_code_for(InvalidInput("x")) == 2
    assert exit_code_for(RuntimeError("x")) == 4


# -- config -------------------------------------------------------------------

def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tuned\ntheta_spic_deg = 70\nmin_vertices=5\ntarget_spacing=auto\n")
    c = load_config(cfg, {"theta_spic_deg": "60"})
    assert (c.theta_spic_deg, c.min_vertices, c.target_spacing) == (60.0, 5, None)
    assert PipelineConfig(**parse_config(c.to_text())) == c
    with pytest.raises(InvalidInput):
        parse_config("nope=1")
    with pytest.raises(InvalidInput):
        parse_config("min_vertices=two")
    with pytest.raises(InvalidInput):
        PipelineConfig(threshold=1.5)


# -- eval ---------------------------------------------------------------------

def test_eval_identical_inputs(cone_out, tmp_path):
    m, p = str(cone_out / "masks.nrrd"), str(cone_out / "mesh.ply")
    out = tmp_path / "metrics.json"
    assert main(["eval", "--pred-masks", m, "--gt-masks", m, "--pred-meshes", p, "--gt-meshes", p,
                 "-o", str(out)]) == 0
    report = json.loads(out.read_text())
    assert set(report["segmentation"]["jaccard"].values()) == {1.0}
    chamfer = report["segmentation"]["chamfer"]
    assert chamfer["nodule"] == 0.0 and chamfer["spiculation"] == 0.0
    assert chamfer["lobulation"] is None  # no lobulation vertices on either side


def test_eval_scores_auc(tmp_path):
    rng = np.random.default_rng(7)
    scores = np.round(rng.random(20), 1)
    labels = np.array([0, 1] * 10)
    csv = tmp_path / "scores.csv"
    csv.write_text("score,label\n" + "".join(f"{s},{y}\n" for s, y in zip(scores, labels)))
    out = tmp_path / "metrics.json"
    assert main(["eval", "--scores", str(csv), "-o", str(out)]) == 0
    cls = json.loads(out.read_text())["classification"]
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    assert cls["auc"] == wins / 100
    assert sum(cls["confusion"].values()) == 20


def test_eval_list_mismatch(cone_out, tmp_path):
    m = str(cone_out / "masks.nrrd")
    assert main(["eval", "--pred-masks", m, m, "--gt-masks", m, "-o", str(tmp_path / "m.json")]) == 2


# -- predict --------------------------------------------------------------------

def test_predict_zero_and_dim_mismatch(sphere_out, tmp_path, capsys):
    feats = tmp_path / "zeros.npy"
    np.save(feats, np.zeros(MESH_FEATURES))
    w = tmp_path / "zero.cirw"
    save_weights(MlpWeights.zeros(), w)
    assert main(["predict", str(feats), str(w)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["p_malignant"] == 0.5 and report["feature_source"] == "deep"
    # the geometric stand-in written by annotate --features
    assert main(["predict", str(sphere_out / "mesh_features.npz"), str(w)]) == 0
    assert json.loads(capsys.readouterr().out)["feature_source"] == "geometric-standin"
    hybrid = tmp_path / "hybrid.cirw"
    save_weights(MlpWeights.zeros(HYBRID_DIMS), hybrid)
    assert main(["predict", str(feats), str(hybrid)]) == 2
    enc = tmp_path / "enc.npy"
    np.save(enc, np.zeros(16384))
    assert main(["predict", str(feats), str(hybrid), "--encoder", str(enc)]) == 0
    assert json.loads(capsys.readouterr().out)["p_malignant"] == 0.5


def test_predict_micro_weights(tmp_path, capsys):
    w = MlpWeights(tuple(np.array(x, float) for x in ([[1, -1], [0.5, 2]], [[1, 0], [-1, 1]], [[1, 1], [0, 2]])),
                   tuple(np.array(x, float) for x in ([0, -1], [0.5, 0], [0, -0.5])))
    save_weights(w, tmp_path / "micro.cirw")
    np.save(tmp_path / "x.npy", np.array([2.0, 1.0]))
    assert main(["predict", str(tmp_path / "x.npy"), str(tmp_path / "micro.cirw"), "--threshold", "0.2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert abs(report["p_malignant"] - 1 / (1 + math.e)) < 1e-9
    assert report["label"] == 1


# -- info -----------------------------------------------------------------------

def test_info(cone_out, capsys):
    assert main(["info", str(cone_out / "masks.nrrd")]) == 0
    vol = json.loads(capsys.readouterr().out)
    assert vol["kind"] == "volume" and int(vol["label_counts"]["2"]) > 0
    assert main(["info", str(cone_out / "mesh.ply")]) == 0
    mesh = json.loads(capsys.readouterr().out)
    assert mesh["kind"] == "mesh" and mesh["genus"] == 0 and "epsilon" in mesh["channels"]
    assert main(["info", str(cone_out / "annotation.json")]) == 2
