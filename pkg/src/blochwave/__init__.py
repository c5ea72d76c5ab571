"""Numerical toolkit for the spectral stability and modulation dynamics of
periodic traveling waves: Bloch/Floquet analysis, profile solvers, stability
condition checks, linearized evolution, and first-order averaged dynamics."""

__version__ = "0.1.0"
