"""Finite-difference experiments for 3-D compressible elastic waves with a
quadratic nonlinearity and a compactly perturbed density."""

__version__ = "0.1.0"
