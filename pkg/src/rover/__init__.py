"""Learned zeroth-order optimization on 2D grid samples."""
__version__ = "0.1.0"
