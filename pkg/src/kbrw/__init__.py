"""Numerical tools for the noisy K-branching random walk and its log-profile dynamics."""

__version__ = "0.1.0"
