"""Numerical laboratory for dissipative Anosov flows on the Bolza surface."""

__version__ = "0.1.0"
