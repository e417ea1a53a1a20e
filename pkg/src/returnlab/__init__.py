"""Exact and Monte Carlo return-time statistics for cylinder targets."""

__version__ = "0.1.0"
