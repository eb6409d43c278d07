"""Certification toolkit for feed-forward ReLU networks."""

__version__ = "0.1.0"
