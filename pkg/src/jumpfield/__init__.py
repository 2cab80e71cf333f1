"""Simulation of spatially extended jump-diffusion networks with delays and their mean-field limit."""

__version__ = "0.1.0"
