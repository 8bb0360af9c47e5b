"""Variational Monte Carlo over linear subspaces of quantum spin systems."""

__version__ = "0.1.0"
