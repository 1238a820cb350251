"""Implicit patch extraction, planar quilting and synthesis over target surfaces."""

from .library import (ExtractionReport, LibraryFormatError, MatchResult, OverlapIndex, PatchLibrary, build_library,
                      candidate_probabilities, default_overlap, match_candidates, read_library, write_library)
from .patches import FLIP_H, FLIP_V, FeaturePatch, augment_flips, canonical_quat, extract_patch, flip_patch, scan_grid
from .poisson import PoissonSamples, min_pairwise_distance, packing_radius, poisson_disk_sample
from .quilting import LAYOUTS, Seam, exhaustive_min_path, horizontal_seam, layout_mask, min_cut_seam, synthesize_planar
from .surface import (PatchPyramid, PatchTemplate, SurfaceSynthesisResult, UvAtlasTarget, VectorFieldOnMesh,
                      bake_field, blend_and_paste, build_template, coarse_to_fine_match, exhaustive_match, fetch_template_features,
                      interpolate_vector_field, pick_region, synthesize_on_surface, write_surface_result)

__all__ = [
    "ExtractionReport", "LibraryFormatError", "MatchResult", "OverlapIndex", "PatchLibrary", "build_library",
    "candidate_probabilities", "default_overlap", "match_candidates", "read_library", "write_library",
    "FLIP_H", "FLIP_V", "FeaturePatch", "augment_flips", "canonical_quat", "extract_patch", "flip_patch", "scan_grid",
    "PoissonSamples", "min_pairwise_distance", "packing_radius", "poisson_disk_sample",
    "LAYOUTS", "Seam", "exhaustive_min_path", "horizontal_seam", "layout_mask", "min_cut_seam", "synthesize_planar",
    "PatchPyramid", "PatchTemplate", "SurfaceSynthesisResult", "UvAtlasTarget", "VectorFieldOnMesh",
    "bake_field", "blend_and_paste", "build_template", "coarse_to_fine_match", "exhaustive_match", "fetch_template_features",
    "interpolate_vector_field", "pick_region", "synthesize_on_surface", "write_surface_result",
]
