"""Finite operator learning for parametric linear elasticity.

A network maps a heterogeneous modulus field to the nodal displacement
field; training minimizes the discrete finite-element energy, so no
solved examples are needed.
"""
from .deeponet import DeepONetConfig, train_deeponet
from .errors import FolError
from .fol import FolConfig, fol_loss, predict, train_fol
from .mesh import DofMap, Mesh, build_dof_map, build_structured_grid, build_structured_tet_mesh
from .metrics import ErrorReport, compare_fields
from .microstructure import ElasticityField, FourierSpec, SampleSet
from .solver import SolutionField, solve_reference

__version__ = "0.1.0"

__all__ = [
    "DeepONetConfig", "DofMap", "ElasticityField", "ErrorReport", "FolConfig", "FolError", "FourierSpec",
    "Mesh", "SampleSet", "SolutionField", "build_dof_map", "build_structured_grid", "build_structured_tet_mesh",
    "compare_fields", "fol_loss", "predict", "solve_reference", "train_deeponet", "train_fol",
]
