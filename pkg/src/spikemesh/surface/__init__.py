from .io import read_obj, read_ply, write_obj, write_ply
from .marching_cubes import marching_cubes, marching_cubes_array
from .mesh import TriMesh, largest_component, mesh_stats
from .smoothing import taubin_smooth

__all__ = ["TriMesh", "largest_component", "marching_cubes", "marching_cubes_array", "mesh_stats",
           "read_obj", "read_ply", "taubin_smooth", "write_obj", "write_ply"]
