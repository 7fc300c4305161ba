"""Facial action unit detection toolkit built around region-level R-CNN heads."""

__version__ = "0.1.0"
