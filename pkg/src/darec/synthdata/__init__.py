"""Procedural shapes, rendering and the synthetic natural-image domain."""

from .dataset import (
    DatasetAdapter,
    DatasetSpec,
    ShapeImageDataset,
    build_dataset,
    generate_dataset,
    load_dataset,
    read_manifest,
)
from .naturalize import NaturalizeConfig, naturalize
from .render import Domain, ImageSample, RenderConfig, View, render
from .shapes import CATEGORIES, ShapeConfig, generate_parts, generate_shape, generate_voxels

__all__ = [
    "CATEGORIES",
    "DatasetAdapter",
    "DatasetSpec",
    "Domain",
    "ImageSample",
    "NaturalizeConfig",
    "RenderConfig",
    "ShapeConfig",
    "ShapeImageDataset",
    "View",
    "build_dataset",
    "generate_dataset",
    "generate_parts",
    "generate_shape",
    "generate_voxels",
    "load_dataset",
    "naturalize",
    "read_manifest",
    "render",
]
