"""Simulation and verification of non-autonomous semilinear input-output systems."""

__version__ = "0.1.0"
