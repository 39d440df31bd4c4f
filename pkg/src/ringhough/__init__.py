"""Directed-ridge circle Hough transform for defocused-particle ring detection."""

__version__ = "0.1.0"
