"""Mask-based speech enhancement with a dual-stream spectrogram refine network."""

__version__ = "0.1.0"
