"""Deterministic tiled map synthesis, voxel world lifting, and ray-cast rendering."""

__version__ = "0.1.0"

from .latentgrid import (LatentField, PatchGenerator, ReceptiveField, Rect,
                         calibrate_region, influence_rect, resample_region,
                         sample_field, synthesize_region)
from .satmap import CdnTile, Palette, bilateral_filter, clean_tile, default_palette
from .voxelworld import (OctreeBlock, VoxelWorld, assemble_world,
                         complete_pillar, complete_watertight, lift_tile)
from .ingest import LabeledMesh, sample_surface, topdown_scan, voxelize
from .camsample import CameraPose, label_walkable, refine_mask, sample_cameras
from .render import HitRecord, Ray, RenderOutput, raycast, render_view, trilinear_features
from .metrics import OccupancyStats, stats_distance, world_stats

__all__ = [
    "__version__",
    "LatentField", "PatchGenerator", "ReceptiveField", "Rect",
    "calibrate_region", "influence_rect", "resample_region", "sample_field",
    "synthesize_region",
    "CdnTile", "Palette", "bilateral_filter", "clean_tile", "default_palette",
    "OctreeBlock", "VoxelWorld", "assemble_world", "complete_pillar",
    "complete_watertight", "lift_tile",
    "LabeledMesh", "sample_surface", "topdown_scan", "voxelize",
    "CameraPose", "label_walkable", "refine_mask", "sample_cameras",
    "HitRecord", "Ray", "RenderOutput", "raycast", "render_view",
    "trilinear_features",
    "OccupancyStats", "stats_distance", "world_stats",
]
