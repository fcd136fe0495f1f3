"""Spiculation and lobulation annotation of lung-nodule masks by spherical
parameterization, with reference metrics and a malignancy classifier."""
from .pipeline import PipelineConfig, run_annotation
from .spherical import AreaDistortionMap, SphericalMap, area_distortion, parameterize
from .spikes import NoduleAnnotation, Spike, SpikeOptions, annotate, detect_spikes, voxelize_annotation
from .surface import TriMesh, marching_cubes, mesh_stats
from .volume_io import MaskVolume, read_nrrd, resample_isotropic, write_nrrd

__version__ = "0.1.0"

__all__ = [
    "AreaDistortionMap", "MaskVolume", "NoduleAnnotation", "PipelineConfig", "Spike", "SpikeOptions",
    "SphericalMap", "TriMesh", "annotate", "area_distortion", "detect_spikes", "marching_cubes",
    "mesh_stats", "parameterize", "read_nrrd", "resample_isotropic", "run_annotation",
    "voxelize_annotation", "write_nrrd",
]
