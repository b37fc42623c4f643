"""Capacity bounds and achievable rates for energy-harvesting channels with a finite battery."""
__version__ = "0.1.0"
