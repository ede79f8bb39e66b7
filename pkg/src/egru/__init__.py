"""Embedded GRU: single-gate recurrent cells, 3-bit weights, Q15 inference."""
__version__ = "0.1.0"
