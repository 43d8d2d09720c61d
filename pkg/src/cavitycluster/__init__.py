"""Dissipative cavity-QED atomic cluster-state generation and fusion simulator."""

__version__ = "0.1.0"

from . import dynamics, hilbert, optics, protocol  # noqa: F401
