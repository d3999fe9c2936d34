"""Learned per-flow queue sizing: a single-bottleneck TCP simulator and its learned cap controller."""

__version__ = "0.1.0"
