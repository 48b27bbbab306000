"""Simulation and analysis of time-tagged photon streams from single emitters."""

__version__ = "0.1.0"
