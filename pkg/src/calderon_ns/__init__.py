"""Pseudospectral toolkit for Besov-space splitting of Navier-Stokes data on a periodic box."""

__version__ = "0.1.0"
