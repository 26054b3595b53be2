"""Transverse contraction certificates for polynomial systems."""

__version__ = "0.1.0"
