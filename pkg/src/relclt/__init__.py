"""Relative central limit theorems and multiplier bootstrap inference for
non-stationary time series."""

__version__ = "0.1.0"
