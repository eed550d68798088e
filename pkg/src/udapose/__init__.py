"""Unsupervised domain adaptation for 2D pose estimation with a mean teacher,
normalized heatmap pseudo-labels, style transfer and adaptive occlusion."""

__version__ = "0.1.0"
