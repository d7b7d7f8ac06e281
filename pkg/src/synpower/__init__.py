"""Simulation-based power analysis for two-sample tests on real and
GAN-synthesized data."""

__version__ = "0.1.0"
