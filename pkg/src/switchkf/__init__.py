"""Adaptive variance estimation for random-walk state-space models via expert aggregation."""

__version__ = "0.1.0"
