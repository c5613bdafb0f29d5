"""Gridless sparse Bayesian learning receiver for MIMO-OFDM ISAC sensing."""

__version__ = "0.1.0"
