"""Tracking of maneuvering targets with CRB-driven mobile sensor control."""

__version__ = "0.1.0"
