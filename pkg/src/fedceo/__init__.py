"""Deterministic federated learning with tensor low-rank server smoothing."""

__version__ = "0.1.0"
