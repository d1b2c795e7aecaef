"""Gaussian-state simulator for light-mediated collective spin squeezing."""

__version__ = "0.1.0"
