"""Unsupervised 3D recognition toolkit: balanced self-labeling of point-cloud
objects, geometric selective search proposals, and evaluation metrics."""

__version__ = "0.1.0"
