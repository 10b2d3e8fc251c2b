"""Spectral slice-graph encoder for volumetric multi-label classification."""

__version__ = "0.1.0"
