"""Desk-scale quality estimation: encoder, QE heads, explainers, ensembles, metrics."""

__version__ = "0.1.0"
