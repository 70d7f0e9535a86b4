"""Tooling for prompt-conditioned chess policies."""

__version__ = "0.1.0"
