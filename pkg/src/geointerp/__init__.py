"""Geodesic interpolants between distributions on S^n and SO(3)."""

__version__ = "0.1.0"
