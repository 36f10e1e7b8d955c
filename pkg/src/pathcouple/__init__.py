"""Couplings, Zvonkin transforms and Wasserstein estimation on weighted path space."""

__version__ = "0.1.0"
