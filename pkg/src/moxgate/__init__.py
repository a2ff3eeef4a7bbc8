"""Modality-aware cross-attention for multi-omic subtype classification."""

__version__ = "0.1.0"
