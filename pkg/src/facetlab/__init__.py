"""Simulation of area-conditioned oriented lattice paths and their concave-majorant geometry."""

__version__ = "0.1.0"
