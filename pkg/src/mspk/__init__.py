"""Numerical toolkit for the multi-species Sherrington-Kirkpatrick model."""

__version__ = "0.1.0"
