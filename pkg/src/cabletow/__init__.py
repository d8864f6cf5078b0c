"""Decentralized multi-robot cable towing: simulation, planning, learning."""

__version__ = "0.1.0"
