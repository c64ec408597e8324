"""Cross-domain style mixing on a miniature style-based generator."""

__version__ = "0.1.0"
