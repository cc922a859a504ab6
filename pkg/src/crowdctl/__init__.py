"""Synchronous gates on a crowded two-pair ion: pulse design, simulation and tomography."""

__version__ = "0.1.0"
