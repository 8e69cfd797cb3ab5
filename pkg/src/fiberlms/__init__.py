"""Longitudinal power profile monitoring with a frequency-domain block LMS."""

__version__ = "0.1.0"
