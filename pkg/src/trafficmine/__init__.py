"""Unsupervised state modeling of TCP traffic with process discovery and conformance."""

__version__ = "0.1.0"
