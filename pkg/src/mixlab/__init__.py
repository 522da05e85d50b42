"""Spectral laboratory for the randomly forced, locally damped cubic wave equation."""

__version__ = "0.1.0"
