"""Band-limited coordinate fields and cascaded frequency decomposition."""

__version__ = "0.1.0"
