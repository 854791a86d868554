"""mptomo: monotonicity-based tomography of nonlinear (saturable) magnetic
anomalies in a two-dimensional disk."""

from .forward import (
    Configuration,
    NonConvergenceError,
    SingularSystemError,
    SolverError,
    SolverSettings,
    avg_dtn_form,
    dtn_form,
    solve,
)
from .geometry import EMPTY, Mesh, build_disk_mesh, region_from_json
from .materials import MU0, LinearMaterial, MaterialField, SaturableMaterial, material_field
from .probes import BoundaryBasis, assemble_dtn_matrix, jacobi_eigh, min_eigenpair, select_probe
from .recon import ProbeSet, TomographySystem, measure, metrics, precompute, reconstruct
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "Configuration", "NonConvergenceError", "SingularSystemError", "SolverError", "SolverSettings",
    "avg_dtn_form", "dtn_form", "solve", "EMPTY", "Mesh", "build_disk_mesh", "region_from_json",
    "MU0", "LinearMaterial", "MaterialField", "SaturableMaterial", "material_field",
    "BoundaryBasis", "assemble_dtn_matrix", "jacobi_eigh", "min_eigenpair", "select_probe",
    "ProbeSet", "TomographySystem", "measure", "metrics", "precompute", "reconstruct",
    "Scenario", "ScenarioError", "load_scenario",
]
