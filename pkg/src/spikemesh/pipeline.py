"""End-to-end annotation of a nodule mask, plus the run configuration.

Steps: isotropic resampling, a light Gaussian pre-blur of the foreground,
a volume-preserving isosurface, largest component, Taubin smoothing, spherical
parameterization, area distortion, spike annotation and voxelization.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import EmptyMask, InvalidInput, IoError
from .spherical import SphericalMap, area_distortion, parameterize
from .spikes import NoduleAnnotation, SpikeOptions, annotate, voxelize_annotation
from .surface.io import write_ply
from .surface.marching_cubes import marching_cubes_array
from .surface.mesh import TriMesh, largest_component, mesh_stats
from .surface.smoothing import taubin_smooth
from .volume_io import MaskVolume, read_nrrd, resample_isotropic, write_nrrd

FORMAT = "spikemesh-annotation/1"


@dataclass(frozen=True)
class PipelineConfig:
    target_spacing: float | None = None  # None means "auto": the finest input spacing
    noise_floor: float = -0.02
    theta_spic_deg: float = 65.0
    min_height_mm: float = 1.0
    min_vertices: int = 8
    param_max_iters: int = 10000
    param_tol: float = 1e-7
    threshold: float = 0.5
    presmooth_sigma: float = 1.5  # voxels of the resampled grid; 0 disables
    smooth_iterations: int = 20  # Taubin iterations; 0 disables

    def __post_init__(self):
        ts = self.target_spacing
        if ts is not None and not (math.isfinite(ts) and ts > 0):
            raise InvalidInput("target_spacing must be 'auto' or a positive number")
        if not (math.isfinite(self.param_tol) and self.param_tol >= 0):
            raise InvalidInput("param_tol must be finite and >= 0")
        if self.param_max_iters < 1:
            raise InvalidInput("param_max_iters must be >= 1")
        if not 0 <= self.threshold <= 1:
            raise InvalidInput("threshold must lie in [0, 1]")
        if not (math.isfinite(self.presmooth_sigma) and 0 <= self.presmooth_sigma <= 5):
            raise InvalidInput("presmooth_sigma must lie in [0, 5]")
        if not 0 <= self.smooth_iterations <= 1000:
            raise InvalidInput("smooth_iterations must lie in [0, 1000]")
        try:
            self.spike_options()
        except ValueError as exc:
            raise InvalidInput(str(exc)) from exc

    def spike_options(self) -> SpikeOptions:
        return SpikeOptions(self.noise_floor, self.min_vertices, self.theta_spic_deg, self.min_height_mm)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_spacing"] = "auto" if self.target_spacing is None else self.target_spacing
        return d

    def to_text(self) -> str:
        """``key=value`` lines that :func:`parse_config` reads back to the same config."""
        return "".join(f"{k}={_format_value(v)}\n" for k, v in self.to_dict().items())

    def replace(self, **changes) -> "PipelineConfig":
        d = asdict(self)
        d.update(changes)
        return PipelineConfig(**d)


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _format_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def coerce_value(key: str, text) -> object:
    """Convert a raw config value for ``key`` to its field type."""
    if key not in _FIELD_TYPES:
        raise InvalidInput(f"unknown config key {key!r}")
    if not isinstance(text, str):
        text = str(text)
    text = text.strip()
    try:
        if key == "target_spacing":
            return None if text.lower() == "auto" else float(text)
        if _FIELD_TYPES[key] == "int":
            return int(text)
        return float(text)
    except ValueError:
        raise InvalidInput(f"bad value {text!r} for {key}") from None


def parse_config(text: str) -> dict:
    """Parse ``key=value`` lines (``#`` comments, blank lines allowed)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce_value(key, value)
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (later wins).

    ``path`` may also be an ``annotation.json`` written by a previous run, in
    which case its embedded config is reused.
    """
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        if str(path).endswith(".json"):
            try:
                embedded = json.loads(text)["config"]
            except (ValueError, KeyError, TypeError):
                raise InvalidInput(f"{path} has no embedded config") from None
            values = {k: coerce_value(k, v) for k, v in embedded.items()}
        else:
            values = parse_config(text)
    for k, v in (overrides or {}).items():
        values[k] = coerce_value(k, v)
    return PipelineConfig(**values)


# -- pipeline -----------------------------------------------------------------

@dataclass(eq=False)
class AnnotationResult:
    grid: MaskVolume
    mesh: TriMesh
    smap: SphericalMap
    annotation: NoduleAnnotation
    masks: MaskVolume
    config: PipelineConfig


def volume_preserving_iso(field: np.ndarray, n_inside: int) -> float:
    """Level that leaves exactly ``n_inside`` samples of ``field`` above it.

    Taken halfway between the n-th and (n+1)-th largest values so no sample
    sits on the level, then kept within [0.1, 0.9].
    """
    flat = field.ravel()
    n = int(n_inside)
    if n >= flat.size:
        return 0.1
    top = -np.partition(-flat, (n - 1, n))[[n - 1, n]]
    return float(np.clip(0.5 * (top[0] + top[1]), 0.1, 0.9))


def extract_surface(vol: MaskVolume, presmooth_sigma: float = 1.5, smooth_iterations: int = 20) -> TriMesh:
    """Closed surface of the foreground of an (isotropic) mask.

    The foreground is blurred by ``presmooth_sigma`` voxels, which removes
    most of the voxel staircase. Blurring pulls convex boundaries inward, so
    the isosurface is taken at the level that keeps the foreground voxel
    count rather than at 0.5. The largest component is kept and then
    Taubin-smoothed.
    """
    fg = vol.foreground()
    if not fg.any():
        raise EmptyMask("mask has no foreground voxels")
    field = fg.astype(np.float64)
    origin = np.asarray(vol.origin, dtype=np.float64)
    iso = 0.5
    if presmooth_sigma > 0:
        pad = int(math.ceil(4 * presmooth_sigma)) + 1
        field = gaussian_filter(np.pad(field, pad), presmooth_sigma, mode="constant", truncate=4.0)
        origin = origin - pad * np.asarray(vol.spacing)
        iso = volume_preserving_iso(field, np.count_nonzero(fg))
        if field.max() <= iso:
            raise EmptyMask("foreground too small to survive presmoothing; lower presmooth_sigma")
    mesh = largest_component(marching_cubes_array(field, iso, vol.spacing, origin))
    return taubin_smooth(mesh, smooth_iterations)


def run_annotation(vol: MaskVolume, config: PipelineConfig | None = None) -> AnnotationResult:
    cfg = config or PipelineConfig()
    grid = resample_isotropic(vol, cfg.target_spacing)
    mesh = extract_surface(grid, cfg.presmooth_sigma, cfg.smooth_iterations)
    smap = parameterize(mesh, max_iters=cfg.param_max_iters, tol=cfg.param_tol)
    adm = area_distortion(mesh, smap)
    ann = annotate(mesh, adm, cfg.spike_options())
    mesh.channels["epsilon"] = adm.epsilon_vertex
    mesh.channels["class"] = ann.vertex_class
    masks = voxelize_annotation(ann, mesh, grid)
    return AnnotationResult(grid, mesh, smap, ann, masks, cfg)


def annotation_report(result: AnnotationResult, source: str | None = None) -> dict:
    stats = mesh_stats(result.mesh)
    ann = result.annotation.to_dict()
    return {
        "format": FORMAT,
        "source": source,
        "config": result.config.to_dict(),
        "grid": {"dims": list(result.grid.dims), "spacing": list(result.grid.spacing),
                 "origin": list(result.grid.origin)},
        "mesh": {k: stats[k] for k in ("V", "E", "F", "euler", "genus", "surface_area", "volume")},
        "parameterization": {"iterations": result.smap.iterations_used,
                             "final_energy": result.smap.final_energy},
        "spikes": ann["spikes"],
        "summary": ann["summary"],
        "params": ann["params"],
        "notes": ann["notes"],
    }


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(result: AnnotationResult, out_dir, source: str | None = None,
                  energy_csv: bool = False) -> dict:
    """Write ``mesh.ply``, ``annotation.json`` and ``masks.nrrd`` into ``out_dir``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    config_lines = ["config " + line for line in result.config.to_text().splitlines()]
    write_ply(result.mesh, os.path.join(out_dir, "mesh.ply"), comments=config_lines)
    write_nrrd(result.masks, os.path.join(out_dir, "masks.nrrd"), comments=config_lines)
    report = annotation_report(result, source)
    path = os.path.join(out_dir, "annotation.json")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_json(report))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    if energy_csv:
        result.smap.dump_energy(os.path.join(out_dir, "energy.csv"))
    return report


def annotate_file(mask_path, out_dir, config: PipelineConfig | None = None,
                  energy_csv: bool = False) -> dict:
    vol = read_nrrd(mask_path)
    result = run_annotation(vol, config)
    return write_outputs(result, out_dir, os.path.basename(str(mask_path)), energy_csv)
