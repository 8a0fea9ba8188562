"""Numerical laboratory for moment comparisons of sums of random unit vectors."""

__version__ = "0.1.0"
