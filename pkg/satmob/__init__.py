"""Fusion of device traces and satellite imagery for event inference."""

__version__ = "0.1.0"
