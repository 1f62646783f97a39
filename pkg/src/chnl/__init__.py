"""Nonlocal and local Cahn-Hilliard and cell-adhesion solvers on the flat torus."""

__version__ = "0.1.0"
