"""Adaptive P1 finite elements for singularly perturbed obstacle problems."""

__version__ = "1.0.0"
