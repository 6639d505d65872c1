"""Characteristic-mode analysis and density-based topology optimization."""

__version__ = "0.1.0"
