"""Numerical ψ-Hilfer fractional calculus and Ulam-Hyers-Rassias stability checks."""

__version__ = "0.1.0"
