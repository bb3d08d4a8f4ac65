"""Equilibrium convolutional sparse coding for hyperspectral denoising."""

__version__ = "0.1.0"
