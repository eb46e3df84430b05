"""HTTP inference service for outline-guided inpainting pipelines."""

__version__ = "0.1.0"
