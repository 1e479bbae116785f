"""Crowd-sensed TV white space database for D2D links."""

__version__ = "0.1.0"
