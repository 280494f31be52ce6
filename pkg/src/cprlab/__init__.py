"""Chebyshev prototype risk regularization lab."""

__version__ = "0.1.0"
