"""Executable model of deferred reference listing for actor termination detection."""

__version__ = "0.1.0"
