"""Numerical lab for edge-degenerate calculus on the local model of a special Lagrangian edge."""

from edgecalc.errors import EdgecalcError
from edgecalc.grid import ModelGrid, ScalarField, make_model_grid
from edgecalc.mellin import WeightData

__all__ = ["EdgecalcError", "ModelGrid", "ScalarField", "WeightData", "make_model_grid"]
