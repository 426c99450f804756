"""Simulator for federated learning with server-side adaptive personalized aggregation."""

__version__ = "0.1.0"
