"""Shock-particle dynamics for scalar conservation laws with Markovian data."""

__version__ = "0.1.0"
