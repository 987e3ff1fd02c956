"""Oriented 3D cuboid detection and Manhattan room-layout prediction from RGB-D data."""

__version__ = "0.1.0"
