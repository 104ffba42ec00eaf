"""Dimensionality-reduction pipeline for metasurface analysis and inverse design."""

__version__ = "0.1.0"
