"""Desk-scale semi-supervised learning laboratory on synthetic point data."""

__version__ = "0.1.0"
