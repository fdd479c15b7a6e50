"""Hybrid surface/volume/wire integral-equation solver for EEG forward problems."""
__version__ = "0.1.0"
