"""Offline data-driven optimisation with functional graphical models."""

__version__ = "0.1.0"
