"""Desk-scale two-stage visual-linguistic long-tailed recognition."""

__version__ = "0.1.0"
