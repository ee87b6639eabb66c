"""Coupled Brownian and random-walk loop soups on Z^d / R^d."""

__version__ = "0.1.0"
