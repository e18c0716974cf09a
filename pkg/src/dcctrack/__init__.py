"""Sparse index tracking with differentiable cardinality constraints."""

__version__ = "0.1.0"
