"""Timing-channel simulator for on-core microarchitectural state."""

__version__ = "0.1.0"
