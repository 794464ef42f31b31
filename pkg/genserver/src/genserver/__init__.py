"""Reference generator server for the stdio bridge protocol."""

__version__ = "0.1.0"
