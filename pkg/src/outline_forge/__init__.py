"""Outline-guided inpainting augmentation for instance segmentation datasets."""

__version__ = "0.1.0"
