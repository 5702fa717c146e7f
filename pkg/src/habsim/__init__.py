"""Discrete-event simulation of a harmful-algal-bloom early warning system."""

__version__ = "0.1.0"
