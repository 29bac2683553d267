"""Adaptive tile sizing, overlapping grid planning and tile coordinate transforms.

The tile side is chosen so that the average object, once its tile is
downsampled to the network input, covers the requested target NBA::

    tile_wh = sqrt(image_area * image_nba / target_nba)

Tiles per axis are then the fewest that keep adjacent tiles overlapping by
at least 1.5x the mean object extent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from adatile.core import BBox, ImageDims, NbaLike, area, as_nba
from adatile.dataset import ImageAnnotations

OVERLAP_FACTOR = 1.5
DEFAULT_MAX_TILES = 1024

MANIFEST_FORMAT = "adatile.manifest"
MANIFEST_VERSION = 1


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectStats:
    mean_nba: float
    mean_extent: float


@dataclass(frozen=True)
class Tile:
    col: int
    row: int
    rect: BBox

    @property
    def index(self) -> tuple[int, int]:
        return (self.col, self.row)

    @property
    def offset(self) -> tuple[float, float]:
        return (self.rect.x_min, self.rect.y_min)


@dataclass(frozen=True)
class TilePlan:
    image_id: str
    dims: ImageDims
    tile_size: int
    grid: tuple[int, int]
    tiles: tuple[Tile, ...]
    input_resolution: int
    min_overlap: float

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)

    @property
    def scale(self) -> float:
        """Image pixels per network-input pixel."""
        return self.tile_size / self.input_resolution

    def tile(self, index) -> Tile:
        col, row = (int(v) for v in index)
        n_x, n_y = self.grid
        if not (0 <= col < n_x and 0 <= row < n_y):
            raise KeyError(f"tile {(col, row)} not in {n_x}x{n_y} plan for {self.image_id!r}")
        return self.tiles[row * n_x + col]


# ---------------------------------------------------------------------------
# sizing
# ---------------------------------------------------------------------------


def object_stats(annotations: ImageAnnotations, dims: Optional[ImageDims] = None) -> ObjectStats:
    dims = dims or annotations.dims
    areas = [area(b) for b in annotations.boxes if area(b) > 0]
    if not areas:
        raise PlanningError(f"{annotations.image_id}: no objects; tile size undefined")
    mean_area = math.fsum(areas) / len(areas)
    return ObjectStats(mean_nba=mean_area / dims.area, mean_extent=math.sqrt(mean_area))


def dataset_object_stats(dataset: Sequence[ImageAnnotations]) -> ObjectStats:
    """Pooled statistics over every object in the dataset (fallback for empty images)."""
    nbas, areas = [], []
    for ann in dataset:
        for b in ann.boxes:
            a = area(b)
            if a > 0:
                areas.append(a)
                nbas.append(a / ann.dims.area)
    if not areas:
        raise PlanningError("dataset has no objects; tile size undefined")
    return ObjectStats(mean_nba=math.fsum(nbas) / len(nbas), mean_extent=math.sqrt(math.fsum(areas) / len(areas)))


def raw_tile_size(dims: ImageDims, i_nba: NbaLike, t_nba: NbaLike) -> float:
    """Tile side before clamping and rounding."""
    return math.sqrt(dims.area * as_nba(i_nba) / as_nba(t_nba))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def compute_tile_size(dims: ImageDims, i_nba: NbaLike, t_nba: NbaLike, input_resolution: Optional[int] = None) -> int:
    """Square tile side in pixels, clamped to ``[input_resolution, min(width, height)]``.

    When the image itself is smaller than the network input the upper bound
    wins and the tile is the whole short side.
    """
    side = raw_tile_size(dims, i_nba, t_nba)
    upper = min(dims.width, dims.height)
    if input_resolution is not None:
        side = max(side, float(input_resolution))
    side = min(side, float(upper))
    return max(1, _round_half_up(side))


# ---------------------------------------------------------------------------
# grid planning
# ---------------------------------------------------------------------------


def axis_tile_count(length: int, tile_size: int, min_overlap: float, cap: int = DEFAULT_MAX_TILES) -> int:
    """Fewest tiles along one axis whose even spacing overlaps by ``min_overlap``."""
    if tile_size >= length:
        return 1
    if min_overlap >= tile_size:
        raise PlanningError(
            f"degenerate overlap demand: overlap {min_overlap:.1f}px not achievable with {tile_size}px tiles"
        )
    # overlap (n*T - L)/(n - 1) grows with n; start one below the closed-form
    # bound so float error cannot skip the smallest valid n
    n = max(2, math.ceil(length / tile_size), math.ceil((length - min_overlap) / (tile_size - min_overlap)) - 1)
    while n <= cap and (n * tile_size - length) / (n - 1) < min_overlap:
        n += 1
    if n > cap:
        raise PlanningError(f"degenerate overlap demand: more than {cap} tiles along one axis")
    return n


def axis_offsets(length: int, tile_size: int, n: int) -> list[int]:
    if n == 1:
        return [0]
    span = length - tile_size
    return [_round_half_up(i * span / (n - 1)) for i in range(n)]


def plan_tiles(
    dims: ImageDims,
    tile_size: int,
    mean_extent: float,
    input_resolution: int,
    image_id: str = "",
    max_tiles: int = DEFAULT_MAX_TILES,
) -> TilePlan:
    tile_size = int(tile_size)
    if tile_size < 1 or tile_size > min(dims.width, dims.height):
        raise PlanningError(f"tile size {tile_size} outside [1, {min(dims.width, dims.height)}]")
    if tile_size < input_resolution and min(dims.width, dims.height) >= input_resolution:
        raise PlanningError(f"tile size {tile_size} below network input resolution {input_resolution}")
    if mean_extent <= 0:
        raise PlanningError("mean object extent must be positive")
    min_overlap = OVERLAP_FACTOR * mean_extent
    n_x = axis_tile_count(dims.width, tile_size, min_overlap, max_tiles)
    n_y = axis_tile_count(dims.height, tile_size, min_overlap, max_tiles)
    if n_x * n_y > max_tiles:
        raise PlanningError(f"degenerate overlap demand: {n_x}x{n_y} tiles exceeds cap of {max_tiles}")
    xs = axis_offsets(dims.width, tile_size, n_x)
    ys = axis_offsets(dims.height, tile_size, n_y)
    tiles = tuple(
        Tile(col, row, BBox(float(x), float(y), float(x + tile_size), float(y + tile_size)))
        for row, y in enumerate(ys)
        for col, x in enumerate(xs)
    )
    return TilePlan(image_id, dims, tile_size, (n_x, n_y), tiles, int(input_resolution), min_overlap)


def plan_image(
    ann: ImageAnnotations,
    t_nba: NbaLike,
    input_resolution: int,
    fallback: Optional[ObjectStats] = None,
    override: Optional[ObjectStats] = None,
    max_tiles: int = DEFAULT_MAX_TILES,
) -> TilePlan:
    """Size and plan one image from its own objects.

    ``override`` replaces the per-image statistics outright (an external size
    estimate at deployment); ``fallback`` is used only for images without
    objects.
    """
    if override is not None:
        stats = override
    elif len(ann.boxes):
        stats = object_stats(ann)
    elif fallback is not None:
        stats = fallback
    else:
        raise PlanningError(f"{ann.image_id}: no objects; tile size undefined")
    size = compute_tile_size(ann.dims, stats.mean_nba, t_nba, input_resolution)
    return plan_tiles(ann.dims, size, stats.mean_extent, input_resolution, ann.image_id, max_tiles)


def plan_dataset(
    dataset: Sequence[ImageAnnotations],
    t_nba: NbaLike,
    input_resolution: int,
    override: Optional[ObjectStats] = None,
    max_tiles: int = DEFAULT_MAX_TILES,
) -> list[TilePlan]:
    fallback = None
    if override is None and any(len(a.boxes) == 0 for a in dataset):
        fallback = dataset_object_stats(dataset)
    return [plan_image(a, t_nba, input_resolution, fallback, override, max_tiles) for a in dataset]


# ---------------------------------------------------------------------------
# coordinate transforms
# ---------------------------------------------------------------------------


def tile_to_global(plan: TilePlan, tile_index, b: BBox) -> BBox:
    """Map a box from network-input coordinates of a tile into image coordinates."""
    t = plan.tile(tile_index)
    s = plan.scale
    ox, oy = t.offset
    return BBox(b.x_min * s + ox, b.y_min * s + oy, b.x_max * s + ox, b.y_max * s + oy)


def global_to_tile(plan: TilePlan, tile_index, b: BBox) -> BBox:
    """Pure affine inverse of :func:`tile_to_global`; no clipping."""
    t = plan.tile(tile_index)
    s = plan.scale
    ox, oy = t.offset
    return BBox((b.x_min - ox) / s, (b.y_min - oy) / s, (b.x_max - ox) / s, (b.y_max - oy) / s)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def plan_to_record(plan: TilePlan) -> dict:
    return {
        "image_id": plan.image_id,
        "width": plan.dims.width,
        "height": plan.dims.height,
        "tile_size": plan.tile_size,
        "input_resolution": plan.input_resolution,
        "grid": [plan.grid[0], plan.grid[1]],
        "tiles": [{"col": t.col, "row": t.row, "x": int(t.rect.x_min), "y": int(t.rect.y_min)} for t in plan.tiles],
    }


def plan_from_record(rec: dict, min_overlap: float = 0.0) -> TilePlan:
    dims = ImageDims(int(rec["width"]), int(rec["height"]))
    size = int(rec["tile_size"])
    n_x, n_y = (int(v) for v in rec["grid"])
    raw = sorted(rec["tiles"], key=lambda t: (int(t["row"]), int(t["col"])))
    if len(raw) != n_x * n_y:
        raise ValueError(f"{rec['image_id']}: grid {n_x}x{n_y} but {len(raw)} tiles")
    tiles = []
    for k, t in enumerate(raw):
        col, row = int(t["col"]), int(t["row"])
        if (col, row) != (k % n_x, k // n_x):
            raise ValueError(f"{rec['image_id']}: tile indices do not form a {n_x}x{n_y} grid")
        x, y = float(t["x"]), float(t["y"])
        if x < 0 or y < 0 or x + size > dims.width or y + size > dims.height:
            raise ValueError(f"{rec['image_id']}: tile {(col, row)} extends outside the image")
        tiles.append(Tile(col, row, BBox(x, y, x + size, y + size)))
    return TilePlan(
        str(rec["image_id"]), dims, size, (n_x, n_y), tuple(tiles), int(rec["input_resolution"]),
        float(rec.get("min_overlap", min_overlap)),
    )


def manifest_to_json(plans: Sequence[TilePlan], config: Optional[dict] = None) -> str:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "config": config or {},
        "images": [plan_to_record(p) for p in plans],
    }
    return json.dumps(doc, indent=1) + "\n"


def manifest_from_json(text: str) -> list[TilePlan]:
    doc = json.loads(text)
    if doc.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"not a tile manifest (format={doc.get('format')!r})")
    if int(doc.get("version", 0)) > MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {doc.get('version')}")
    plans = [plan_from_record(r) for r in doc["images"]]
    ids = [p.image_id for p in plans]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image id in manifest")
    return plans
