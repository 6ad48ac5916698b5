"""Kinetic interacting particle Langevin Monte Carlo for maximum marginal likelihood."""

__version__ = "0.1.0"
