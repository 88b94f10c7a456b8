"""Synthetic gas-leak video generation and a voxel-shift-field detector."""

__version__ = "0.1.0"
