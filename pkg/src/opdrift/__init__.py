"""opdrift: evolution-point detection for timestamped opcode-sequence families."""

__version__ = "0.1.0"
