"""Desk-scale learned light-field image codec."""

__version__ = "0.1.0"
