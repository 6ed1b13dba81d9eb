"""OTFS-based over-the-air computation with robust MMSE precoding."""

__version__ = "0.1.0"
