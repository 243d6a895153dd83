"""Numerical laboratory for generalized Sierpinski carpets and their pre-carpets."""

__version__ = "0.1.0"
