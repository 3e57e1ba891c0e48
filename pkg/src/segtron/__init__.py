"""Chinese word segmentation as BMES tagging over a small transformer encoder."""

__version__ = "0.1.0"
