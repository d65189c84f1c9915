"""Intention-behaviour alignment scoring for recorded mobile app sessions."""

__version__ = "0.1.0"
