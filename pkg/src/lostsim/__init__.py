"""Simulation of a battery-less UWB localization system with UHF power transfer."""

__version__ = "0.1.0"
