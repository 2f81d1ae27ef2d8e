"""Sentence-function-aware short-text conversation toolkit."""

__version__ = "0.1.0"
