"""Numerical toolkit for Finsler metric measure spaces and the Finslerian Allen-Cahn equation."""

__version__ = "0.1.0"
