"""Event-driven spiking hierarchical recognition (HFirst) for AER vision streams."""

__version__ = "0.1.0"
