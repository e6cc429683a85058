"""Desk-scale lab for mask-free subtitle erasure via one-step conditional rectified flow."""

__version__ = "0.1.0"
