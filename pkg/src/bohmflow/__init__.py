"""Bohmian trajectories and interference observables for Gaussian wave packets."""

__version__ = "0.1.0"
