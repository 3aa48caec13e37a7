"""Equivariant correlation and second-order Volterra operators on S^2 and SO(3)."""

__version__ = "0.1.0"
