"""Skin-tone estimation and dataset skin-tone auditing."""

__version__ = "0.1.0"
