"""Desk-scale differentiable architecture search engine."""

__version__ = "0.1.0"
