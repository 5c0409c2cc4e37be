"""Cubic and polyhedral stylization of triangle meshes.

Deforms a mesh toward an axis-aligned (or generally polyhedral) look by
minimizing an as-rigid-as-possible energy with an l1 penalty on per-vertex
rotated normals, optimized with a warm-started local-global / ADMM scheme.
"""

from .mesh import (
    MeshError, SpokesRims, TriangleMesh, ValidationReport, build_neighborhoods,
    cubeness_score, load_obj, save_obj, validate, vertex_areas, vertex_normals,
)
from .progressive import (
    CollapseLog, CollapseRecord, affine_fit, decimate, fast_stylize,
    load_collapse_log, reinflate, save_collapse_log,
)
from .solver import (
    AdmmState, Constraints, CubicStylizer, SolverContext, StylizeParams,
    StylizeResult, apply_orientation, fit_rotation_l1, global_step, init,
    local_step, orthogonal_procrustes, rotation_about_axis, shrinkage, stylize,
    total_energy, update_penalty,
)
from .style import (
    StyleControls, StyleOperator, build_style_operator, preset_b_matrix,
    qp_z_step, solve_small_qp,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmState", "CollapseLog", "CollapseRecord", "Constraints",
    "CubicStylizer", "MeshError", "SolverContext", "SpokesRims",
    "StyleControls", "StyleOperator", "StylizeParams", "StylizeResult",
    "TriangleMesh", "ValidationReport", "affine_fit", "apply_orientation",
    "build_neighborhoods", "build_style_operator", "cubeness_score",
    "decimate", "fast_stylize", "fit_rotation_l1", "global_step", "init",
    "load_collapse_log", "load_obj", "local_step", "orthogonal_procrustes",
    "preset_b_matrix", "qp_z_step", "reinflate", "rotation_about_axis",
    "save_collapse_log", "save_obj", "shrinkage", "solve_small_qp", "stylize",
    "total_energy", "update_penalty", "vertex_areas", "vertex_normals",
]
