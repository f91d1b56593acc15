"""FMCW automotive radar interference mitigation toolkit."""

__version__ = "0.1.0"
