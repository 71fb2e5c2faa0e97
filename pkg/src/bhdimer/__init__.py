"""Quantum trajectories and mean-field bifurcations of a driven dissipative Bose-Hubbard dimer."""

__version__ = "0.1.0"
