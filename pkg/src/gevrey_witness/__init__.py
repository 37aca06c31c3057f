"""Numerical witness for the optimal Gevrey index of
``D_x^2 + x^{2(q-1)} D_y^2 + y^{2a} D_y^2``."""

from .model_core import ModelParams, compute_s0
from .pipeline import Problem, prepare

__version__ = "0.1.0"
__all__ = ["ModelParams", "Problem", "compute_s0", "prepare", "__version__"]
