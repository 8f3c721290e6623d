"""Globally optimal non-rigid shape matching by mixed-integer conic programming."""
__version__ = "0.1.0"
