"""Deterministic simulator of host writeback against an SSD write buffer and FTL."""
__version__ = "1.1.0"
