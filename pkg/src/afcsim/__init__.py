"""Desk-scale simulator of an erbium atomic-frequency-comb quantum memory."""

__version__ = "0.1.0"
