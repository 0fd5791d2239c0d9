"""Desk-scale image-timestep-adaptive masked diffusion transformer for virtual try-on."""

__version__ = "0.1.0"
