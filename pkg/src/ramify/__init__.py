"""Replacement systems, combinatorial metrics on their limit spaces, and Julia set cell structures."""

__version__ = "0.1.0"
