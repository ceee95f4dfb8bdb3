"""Bayesian estimation of the panel reverse-unrestricted MIDAS model."""

__version__ = "0.1.0"
