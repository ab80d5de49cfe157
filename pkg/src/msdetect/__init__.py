"""Sequential change-point detection across many parallel Gaussian streams."""

__version__ = "0.1.0"
