"""Spot volatility estimation and forecasting toolkit.

Fourier-Fejer estimators for intraday spot volatility, co-volatility,
volatility of volatility and co-volatility of volatility, a graph
attention forecaster with edge features, reference baselines, and the
evaluation stack used to compare them.
"""

__version__ = "0.1.0"
