"""Numerical laboratory for the chiral smectic/nematic Landau-de Gennes model."""

__version__ = "0.1.0"
