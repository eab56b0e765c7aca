"""Diagnostics laboratory for text-retrieval scoring functions."""

__version__ = "0.1.0"
