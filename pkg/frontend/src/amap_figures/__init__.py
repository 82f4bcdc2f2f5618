"""Offline figure generation from experiment CSVs and field dumps."""

from .metrics import FigureSpec, plot_metrics
from .fields import plot_field_slice

__all__ = ["FigureSpec", "plot_metrics", "plot_field_slice"]
__version__ = "0.1.0"
