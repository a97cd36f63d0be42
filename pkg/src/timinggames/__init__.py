"""Slot-consensus delay simulation and MEV-Boost bid analytics."""

__version__ = "0.1.0"
