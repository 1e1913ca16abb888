"""Conditional diffusion model for synthesizing parameterized quantum circuits."""

__version__ = "0.1.0"
