"""Adaptive tiling for small-object detection on constrained devices."""

from adatile.core import BBox, ImageDims, Nba, area, clip, intersection_ratio, iou
from adatile.dataset import ImageAnnotations, SynthConfig, load_dataset, parse_annotation_file, synth_generate
from adatile.detector import Detection, GridPrediction, SimDetectorConfig, simulate_grid, simulate_tile
from adatile.fusion import FusionConfig, adjacency_fuse, cluster, fuse, match_pairs, pseudo_boxes, reduce
from adatile.metrics import EvalReport, MatchMode, count_mae, match_to_gt, prf1, soft_f1_loss
from adatile.tiling import (
    ObjectStats, Tile, TilePlan, compute_tile_size, global_to_tile, object_stats, plan_tiles, tile_to_global,
)
from adatile.costmodel import CostEstimate, DeviceProfile, avg_tiles, estimate, load_profiles

__all__ = [
    "BBox",
    "ImageDims",
    "Nba",
    "area",
    "clip",
    "intersection_ratio",
    "iou",
    "ImageAnnotations",
    "SynthConfig",
    "load_dataset",
    "parse_annotation_file",
    "synth_generate",
    "Detection",
    "GridPrediction",
    "SimDetectorConfig",
    "simulate_grid",
    "simulate_tile",
    "FusionConfig",
    "adjacency_fuse",
    "cluster",
    "fuse",
    "match_pairs",
    "pseudo_boxes",
    "reduce",
    "EvalReport",
    "MatchMode",
    "count_mae",
    "match_to_gt",
    "prf1",
    "soft_f1_loss",
    "ObjectStats",
    "Tile",
    "TilePlan",
    "compute_tile_size",
    "global_to_tile",
    "object_stats",
    "plan_tiles",
    "tile_to_global",
    "CostEstimate",
    "DeviceProfile",
    "avg_tiles",
    "estimate",
    "load_profiles",
]

__version__ = "0.1.0"
