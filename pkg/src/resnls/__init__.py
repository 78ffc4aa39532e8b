"""Residual-convolution + LSTM forecasting toolkit with its own autodiff engine."""

__version__ = "0.1.0"
