from .bvh import Bvh, Hit, build_bvh, raycast, raycast_batch, raycast_bruteforce, shell_intervals
from .mesh import TriangleMesh, box, compute_face_frames, grid_plane, icosphere, uv_sphere
from .obj_io import ObjFormatError, read_obj, write_obj
from .projection import (BaseProjector, Projection, ProjectionBatch, coarse_normal,
                         coarse_normal_reference, project_to_base, projection_backward,
                         projection_jacobian)
from .spatial_bins import SpatialBinIndex, build_spatial_bins, knn_bruteforce, knn_query

__all__ = [
    "Bvh", "Hit", "build_bvh", "raycast", "raycast_batch", "raycast_bruteforce", "shell_intervals",
    "TriangleMesh", "box", "compute_face_frames", "grid_plane", "icosphere", "uv_sphere",
    "ObjFormatError", "read_obj", "write_obj",
    "BaseProjector", "Projection", "ProjectionBatch", "coarse_normal", "coarse_normal_reference",
    "project_to_base", "projection_backward", "projection_jacobian",
    "SpatialBinIndex", "build_spatial_bins", "knn_bruteforce", "knn_query",
]
