"""Desk-scale coevolutionary continuous-discrete diffusion lab."""

__version__ = "0.1.0"
