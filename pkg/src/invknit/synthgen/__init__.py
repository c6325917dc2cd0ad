"""Synthetic data generation: pattern families, rendering, degradation, datasets."""

from .families import FAMILIES, MJ_FAMILIES, generate_colored_names, generate_pattern
from .imaging import (
    IMAGE_PX,
    TILE_PX,
    DegradeParams,
    RenderTileAtlas,
    build_atlas,
    render,
    simulate_real,
    tile_decode,
)
from .dataset import (
    SPLITS,
    DatasetConfig,
    Sample,
    build_dataset,
    dataset_maps,
    load_sample,
    load_split,
    read_manifest,
    split_counts,
    split_ids,
)

__all__ = [
    "FAMILIES",
    "MJ_FAMILIES",
    "IMAGE_PX",
    "TILE_PX",
    "SPLITS",
    "DatasetConfig",
    "DegradeParams",
    "RenderTileAtlas",
    "Sample",
    "build_atlas",
    "build_dataset",
    "dataset_maps",
    "generate_colored_names",
    "generate_pattern",
    "load_sample",
    "load_split",
    "read_manifest",
    "render",
    "simulate_real",
    "split_counts",
    "split_ids",
    "tile_decode",
]
