"""Numerical toolkit for selling two ordered items to a single buyer."""

__version__ = "0.1.0"
