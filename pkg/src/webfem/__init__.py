"""Meshfree finite elements with non-uniform weighted extended B-splines."""

__version__ = "0.1.0"
