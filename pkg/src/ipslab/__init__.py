"""Finite-volume laboratory for time reversal and Phi-entropy of interacting particle systems."""

__version__ = "0.1.0"
