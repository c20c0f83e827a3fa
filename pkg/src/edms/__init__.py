"""Layered image codec with encoder-decoder matched semantic segmentation."""

__version__ = "0.1.0"
