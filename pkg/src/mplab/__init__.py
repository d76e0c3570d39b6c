"""Multimodal future localization and emergence prediction in a synthetic egocentric world."""

__version__ = "0.1.0"
