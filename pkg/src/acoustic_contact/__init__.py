"""Acoustic contact sensing: featurization, classification and streaming."""

__version__ = "0.1.0"
