"""Lifting noisy multi-view 2D urban labels into consistent 3D semantic and instance fields."""

__version__ = "0.1.0"
