"""Troll-campaign detection and interaction forecasting on temporal graphs."""

__version__ = "0.1.0"
