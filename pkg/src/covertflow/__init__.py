"""Simulation, detection and statistical triage of staged MEV value transfers."""

__version__ = "0.1.0"
