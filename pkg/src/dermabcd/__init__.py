"""Melanoma screening from dermoscopy images with ABCD features and an SVM."""

__version__ = "0.1.0"
