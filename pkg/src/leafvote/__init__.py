"""Frozen-backbone plant disease classifiers fused by weighted soft voting."""

__version__ = "0.1.0"
