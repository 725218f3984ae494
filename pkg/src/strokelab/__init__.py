"""Sigma-Lognormal handwriting features for detecting low-recovery days."""
__version__ = "0.1.0"
