"""Trace-driven simulator for energy-aware VM consolidation with a learned selector."""

__version__ = "0.1.0"
