"""Sensitivity bounds and bootstrap confidence intervals for the overlap-weighted treatment effect."""

__version__ = "0.1.0"
