"""Numerical verification of first-order eigenvalue asymptotics under boundary perturbation."""

__version__ = "0.1.0"
