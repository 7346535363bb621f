"""Bounds and algorithms for unsupervised cross-domain mapping on synthetic domains."""

__version__ = "0.1.0"
