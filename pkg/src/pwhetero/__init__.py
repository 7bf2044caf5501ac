"""Plane-wave Kohn-Sham DFT engine and heterobilayer workflows."""

__version__ = "0.1.0"
