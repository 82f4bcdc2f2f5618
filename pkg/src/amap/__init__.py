"""Uncertainty-aware active mapping of scalar fields.

A robot with uncertain pose maps a synthetic scalar field with a
Gaussian-process model that ingests uncertain inputs, and plans informative
trajectories with an entropy utility that couples localization and map
uncertainty.
"""

from ._backend import BACKEND_NAME as quadrature_backend

__version__ = "0.1.0"
__all__ = ["quadrature_backend", "__version__"]
