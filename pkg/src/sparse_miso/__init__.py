"""Sparse (l1-norm and thresholded) precoding for massive MISO downlinks."""

__version__ = "0.1.0"
