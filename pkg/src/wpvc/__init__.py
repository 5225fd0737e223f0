"""Weighted partial regular vine copula variational LSTM."""

__version__ = "0.1.0"
