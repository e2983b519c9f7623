"""Degree-aware multiway equijoin engine and output-size bound analyzer."""

__version__ = "0.1.0"
