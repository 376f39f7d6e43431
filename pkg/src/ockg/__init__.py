"""Online kernel- and graph-based change-point detection for node streams."""

__version__ = "0.1.0"
