"""Domain-adaptive single-view 3D reconstruction."""

__version__ = "0.1.0"
