"""Gaussian-process line parameter estimation with an HHL quadratic-form backend."""

__version__ = "0.1.0"
