"""Cinematographic drone motion planning and simulation."""

__version__ = "0.1.0"
