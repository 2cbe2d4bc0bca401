"""Pseudo-spectral laboratory for regularized isometric-immersion data maps on S^2."""

from .spectral import SphereGrid, HarmonicField, grid, coeff_index

__all__ = ["SphereGrid", "HarmonicField", "grid", "coeff_index"]
__version__ = "0.1.0"
