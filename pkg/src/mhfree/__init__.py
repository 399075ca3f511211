"""Moral-hazard-free reinsurance under distortion pricing: optimal retention, decay rate and ruin checks."""

__version__ = "0.1.0"
