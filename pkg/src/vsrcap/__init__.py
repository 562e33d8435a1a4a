"""Controllable caption generation from verb-specific semantic role signals."""

__version__ = "0.1.0"
