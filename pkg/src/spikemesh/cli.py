"""Command line entry point: ``spikemesh {annotate,eval,predict,info}``.

Exit codes: 0 success, 2 bad usage or input, 3 the pipeline could not
produce a result for valid input (e.g. no fold-free spherical map),
4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import metrics, pipeline
from .errors import InvalidInput, IoError, NoBijectiveMap, NonManifoldOutput, SpikeMeshError
from .malignancy import (DEEP, GEOMETRIC_STANDIN, MESH_FEATURES, MeshFeatureVector,
                         assemble_mesh_features, concat_hybrid, geometric_branches, load_weights,
                         mlp_forward, prediction_report)
from .surface.io import read_obj, read_ply
from .surface.mesh import mesh_stats
from .volume_io import LOBULATION, SPICULATION, read_nrrd

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("spikemesh")

CLASSES = ("nodule", "spiculation", "lobulation")
_VOXEL_CLASS = {"nodule": None, "spiculation": SPICULATION, "lobulation": LOBULATION}
_VERTEX_CLASS = {"nodule": None, "spiculation": 1, "lobulation": 2}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (NoBijectiveMap, NonManifoldOutput)):
        return EXIT_PIPELINE
    if isinstance(exc, (InvalidInput, IoError, FileNotFoundError, PermissionError)):
        return EXIT_INPUT
    return EXIT_INTERNAL


def _fail(exc: BaseException) -> int:
    code = exit_code_for(exc)
    if code == EXIT_INTERNAL and not isinstance(exc, SpikeMeshError):
        log.exception("internal error")
    print(f"spikemesh: error: {exc}", file=sys.stderr)
    return code


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# -- annotate -----------------------------------------------------------------

def _annotate_one(args):
    mask_path, out_dir, config, energy_csv, features = args
    try:
        report = pipeline.annotate_file(mask_path, out_dir, config, energy_csv)
        if features:
            _write_features(out_dir)
        return EXIT_OK, report["summary"], None
    except Exception as exc:  # reported per case, the worst code wins
        return exit_code_for(exc), None, f"{mask_path}: {exc}"


def _write_features(out_dir) -> None:
    mesh = read_ply(os.path.join(out_dir, "mesh.ply"))
    branches = geometric_branches(mesh, mesh.channels["epsilon"], mesh.channels["class"])
    fv = assemble_mesh_features(branches, GEOMETRIC_STANDIN)
    with open(os.path.join(out_dir, "mesh_features.npz"), "wb") as fh:
        np.savez(fh, values=fv.values, feature_source=np.array(fv.feature_source),
                 vertex_count_actual=np.array(fv.vertex_count_actual))


def cmd_annotate(args) -> int:
    overrides = dict(kv for kv in (args.set or []))
    for key in ("target_spacing", "noise_floor", "theta_spic_deg", "min_height_mm", "min_vertices",
                "param_max_iters", "param_tol", "presmooth_sigma", "smooth_iterations"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    config = pipeline.load_config(args.config, overrides)
    masks = args.masks
    if len(masks) == 1:
        outs = [args.out]
    else:
        stems = [os.path.basename(m).split(".")[0] for m in masks]
        if len(set(stems)) != len(stems):
            raise InvalidInput("input masks must have distinct file names")
        outs = [os.path.join(args.out, s) for s in stems]
    jobs = [(m, o, config, args.energy_csv, args.features) for m, o in zip(masks, outs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_annotate_one, jobs))
    else:
        results = [_annotate_one(j) for j in jobs]
    code = EXIT_OK
    for (rc, summary, err), m in zip(results, masks):
        if err:
            print(f"spikemesh: error: {err}", file=sys.stderr)
        else:
            log.info("%s: %d spiculation(s), %d lobulation(s)", m,
                     summary["n_spiculations"], summary["n_lobulations"])
        code = max(code, rc)
    return code


# -- eval ---------------------------------------------------------------------

def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def _read_mesh(path):
    return read_ply(path) if str(path).lower().endswith(".ply") else read_obj(path)


def _class_points(mesh, name):
    code = _VERTEX_CLASS[name]
    if code is None:
        return mesh.vertices
    cls = mesh.channels.get("class")
    if cls is None:
        return mesh.vertices[:0]
    return mesh.vertices[np.asarray(cls) == code]


def _read_scores(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows or not {"score", "label"} <= set(rows[0]):
        raise InvalidInput(f"{path}: need a CSV header with 'score' and 'label' columns")
    try:
        scores = [float(r["score"]) for r in rows]
        labels = [float(r["label"]) for r in rows]
    except ValueError as exc:
        raise InvalidInput(f"{path}: {exc}") from None
    return scores, labels


def evaluate(pred_masks=(), gt_masks=(), pred_meshes=(), gt_meshes=(), scores_path=None,
             threshold: float = 0.5, rm_labels: bool = False) -> dict:
    if len(pred_masks) != len(gt_masks):
        raise InvalidInput(f"{len(pred_masks)} predicted vs {len(gt_masks)} reference masks")
    if len(pred_meshes) != len(gt_meshes):
        raise InvalidInput(f"{len(pred_meshes)} predicted vs {len(gt_meshes)} reference meshes")
    if pred_meshes and pred_masks and len(pred_meshes) != len(pred_masks):
        raise InvalidInput("mask and mesh case lists differ in length")
    n_cases = max(len(pred_masks), len(pred_meshes))
    cases = []
    for i in range(n_cases):
        case = {"case": os.path.basename(str((pred_masks or pred_meshes)[i]))}
        if pred_masks:
            a, b = read_nrrd(pred_masks[i]), read_nrrd(gt_masks[i])
            case["jaccard"] = {c: metrics.jaccard(a, b, _VOXEL_CLASS[c]) for c in CLASSES}
        if pred_meshes:
            ma, mb = _read_mesh(pred_meshes[i]), _read_mesh(gt_meshes[i])
            cd = {}
            for c in CLASSES:
                pa, pb = _class_points(ma, c), _class_points(mb, c)
                cd[c] = metrics.chamfer_weighted_symmetric(pa, pb) if len(pa) and len(pb) else None
            case["chamfer"] = cd
        cases.append(case)
    report = {"cases": cases, "threshold": threshold}
    seg = {}
    for key in ("jaccard", "chamfer"):
        if cases and key in cases[0]:
            seg[key] = {c: _mean(cs[key][c] for cs in cases) for c in CLASSES}
    report["segmentation"] = seg
    if scores_path is not None:
        scores, labels = _read_scores(scores_path)
        y = metrics.binarize_rm(labels) if rm_labels else np.asarray(labels)
        cls = {"n": len(scores), "auc": metrics.roc_auc(scores, y)}
        bm = metrics.binary_metrics(scores, y, threshold)
        cls.update({k: bm[k] for k in ("accuracy", "sensitivity", "specificity", "f1")})
        cls["confusion"] = {k: bm[k] for k in ("tp", "fp", "tn", "fn")}
        report["classification"] = cls
    return report


def cmd_eval(args) -> int:
    report = evaluate(args.pred_masks or [], args.gt_masks or [], args.pred_meshes or [],
                      args.gt_meshes or [], args.scores, args.threshold, args.rm_labels)
    _write_text(args.output, pipeline.dumps_json(report))
    return EXIT_OK


# -- predict ------------------------------------------------------------------

def _load_features(path):
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot load features from {path}: {exc}") from None
    if isinstance(data, np.lib.npyio.NpzFile):
        with data:
            values = np.asarray(data["values"], dtype=np.float64)
            source = str(data["feature_source"]) if "feature_source" in data.files else DEEP
        return values, source
    return np.asarray(data, dtype=np.float64), DEEP


def cmd_predict(args) -> int:
    x, source = _load_features(args.features)
    if args.encoder is not None:
        enc, _ = _load_features(args.encoder)
        if x.size != MESH_FEATURES:
            raise InvalidInput("--encoder needs a 96000-value mesh feature file")
        x = concat_hybrid(enc, MeshFeatureVector(x.ravel(), 0, source)).values
    weights = load_weights(args.weights)
    probs = mlp_forward(x, weights)
    report = prediction_report(probs, args.threshold, args.feature_source or source)
    sys.stdout.write(pipeline.dumps_json(report))
    return EXIT_OK


# -- info ---------------------------------------------------------------------

def info(path) -> dict:
    low = str(path).lower()
    if low.endswith(".nrrd"):
        vol = read_nrrd(path)
        values, counts = np.unique(vol.labels, return_counts=True)
        return {"kind": "volume", "dims": list(vol.dims), "spacing": list(vol.spacing),
                "origin": list(vol.origin),
                "label_counts": {str(int(v)): int(c) for v, c in zip(values, counts)},
                "foreground_volume_mm3": float(np.count_nonzero(vol.labels) * np.prod(vol.spacing))}
    if low.endswith(".ply") or low.endswith(".obj"):
        mesh = _read_mesh(path)
        stats = mesh_stats(mesh, require_closed=False)
        stats["kind"] = "mesh"
        stats["channels"] = sorted(mesh.channels)
        return stats
    raise InvalidInput(f"{path}: expected a .nrrd, .ply or .obj file")


def cmd_info(args) -> int:
    sys.stdout.write(pipeline.dumps_json(info(args.path)))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def _key_value(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected key=value")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikemesh", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("annotate", help="mask -> labelled mesh, annotation report and class masks")
    a.add_argument("masks", nargs="+", help="NRRD mask file(s)")
    a.add_argument("-o", "--out", required=True, help="output directory (one subdirectory per "
                                                      "mask when several are given)")
    a.add_argument("-c", "--config", help="key=value config file or a previous annotation.json")
    a.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    a.add_argument("--target-spacing", dest="target_spacing")
    a.add_argument("--noise-floor", dest="noise_floor", type=float)
    a.add_argument("--theta-spic-deg", dest="theta_spic_deg", type=float)
    a.add_argument("--min-height-mm", dest="min_height_mm", type=float)
    a.add_argument("--min-vertices", dest="min_vertices", type=int)
    a.add_argument("--param-max-iters", dest="param_max_iters", type=int)
    a.add_argument("--param-tol", dest="param_tol", type=float)
    a.add_argument("--presmooth-sigma", dest="presmooth_sigma", type=float)
    a.add_argument("--smooth-iterations", dest="smooth_iterations", type=int)
    a.add_argument("--energy-csv", action="store_true", help="also write the per-sweep energy trace")
    a.add_argument("--features", action="store_true",
                   help="also write mesh_features.npz (geometric stand-in features)")
    a.add_argument("-j", "--jobs", type=int, default=1, help="parallel cases")
    a.set_defaults(func=cmd_annotate)

    e = sub.add_parser("eval", help="segmentation and classification metrics")
    e.add_argument("--pred-masks", nargs="+")
    e.add_argument("--gt-masks", nargs="+")
    e.add_argument("--pred-meshes", nargs="+")
    e.add_argument("--gt-meshes", nargs="+")
    e.add_argument("--scores", help="CSV with 'score' and 'label' columns")
    e.add_argument("--rm-labels", action="store_true",
                   help="labels are 1-5 malignancy ratings, positive iff > 3")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("-o", "--output", default="metrics.json")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="malignancy probability from a feature vector")
    r.add_argument("features", help=".npy vector or .npz with a 'values' array")
    r.add_argument("weights", help="CIRW weight file")
    r.add_argument("--encoder", help="16384-value encoder block to build the hybrid input")
    r.add_argument("--threshold", type=float, default=0.5)
    r.add_argument("--feature-source", choices=(DEEP, GEOMETRIC_STANDIN))
    r.set_defaults(func=cmd_predict)

    i = sub.add_parser("info", help="volume or mesh statistics")
    i.add_argument("path")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except Exception as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
