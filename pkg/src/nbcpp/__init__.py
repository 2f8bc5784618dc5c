"""Normalized binary contact path process: simulation, random-walk analytics,
two-point moment kernels and an occupation-time CLT harness."""

from .params import ModelParams

__version__ = "0.1.0"

__all__ = ["ModelParams", "__version__"]
