"""Autonomous instrument positioning from shadow cues, in kinematic simulation."""

__version__ = "0.1.0"
