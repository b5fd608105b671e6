"""Exterior Bernoulli free boundary solver for A-harmonic operators."""

__version__ = "0.1.0"
