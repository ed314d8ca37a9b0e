"""Radial numerics for K-wise coupled nonlinear Schrödinger systems."""

__version__ = "0.1.0"
