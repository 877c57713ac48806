"""Tool-manipulation policies from a single extracted tool trajectory."""

__version__ = "0.1.0"
