"""Dual-pathway rectifier networks for patch-based image denoising."""

__version__ = "0.1.0"
