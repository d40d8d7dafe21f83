"""Two-scale phase-transition simulator with a precomputed effective conductivity."""

__version__ = "0.1.0"
