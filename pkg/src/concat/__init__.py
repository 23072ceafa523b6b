"""Continuous-time cascade popularity prediction."""

__version__ = "0.1.0"
