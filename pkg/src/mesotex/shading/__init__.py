"""Spherical-harmonics lighting, shading and fine-normal assembly."""

from .lighting import (A_HAT, DIFFUSE_ORDER, SPECULAR_ORDER, SHLighting, ShadeCache, ShadeGrads, irradiance, reflect,
                       shade, shade_backward, specular_bands)
from .normals import (FrameTransport, assemble_fine_normal, fine_normal_backward, local_direction, matrix_to_quat,
                      phi_to_vec, quat_to_matrix)
from .sh import MAX_ORDER, SH_BAND, n_coeffs, project_environment, sh_basis, sh_basis_grad, sphere_quadrature

__all__ = [
    "A_HAT", "DIFFUSE_ORDER", "SPECULAR_ORDER", "SHLighting", "ShadeCache", "ShadeGrads", "irradiance", "reflect",
    "shade", "shade_backward", "specular_bands", "FrameTransport", "assemble_fine_normal", "fine_normal_backward",
    "local_direction", "matrix_to_quat", "phi_to_vec", "quat_to_matrix", "MAX_ORDER", "SH_BAND", "n_coeffs",
    "project_environment", "sh_basis", "sh_basis_grad", "sphere_quadrature",
]
