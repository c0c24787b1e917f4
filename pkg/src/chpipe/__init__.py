"""Coronal-hole segmentation, cluster matching, and map classification."""

__version__ = "0.1.0"
