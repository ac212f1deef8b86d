"""Spatial SIR particle system on the unit torus, its deterministic limit and Gaussian fluctuations."""

__version__ = "0.1.0"
