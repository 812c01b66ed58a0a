"""Exact dyadic construction of measures with thin annuli, and the checks around them."""

__version__ = "0.1.0"
