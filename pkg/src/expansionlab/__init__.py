"""Finite-population laboratory for expansion-based self-training theory."""

__version__ = "0.1.0"
