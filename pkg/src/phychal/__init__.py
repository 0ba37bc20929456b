"""Simulation of phase challenge-response authentication with artificial noise over OFDM."""

__version__ = "0.1.0"
