"""Binaural scene understanding: semantic, depth and motion maps from binaural audio,
with spatial sound super-resolution as an auxiliary task."""

__version__ = "0.1.0"
