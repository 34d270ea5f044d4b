"""Simulation and verification toolkit for the myopic self-avoiding walk."""

__version__ = "0.1.0"
