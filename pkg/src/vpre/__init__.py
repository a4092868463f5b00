"""Visually-aware personalized ranking and generative garment design."""

__version__ = "0.1.0"
