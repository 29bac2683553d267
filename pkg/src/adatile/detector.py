"""Detector abstraction: a seeded simulated detector and the predictions-file adapter.

The simulator stands in for a trained network. Given ground truth and a tile
plan it reports what a detector looking at one tile could plausibly see:
objects cut by the tile border come back clipped, and noise (misses, corner
jitter, false positives) is drawn from a generator keyed on
``(seed, image_id, tile)`` so results never depend on evaluation order.

Predictions files are JSON lines, one detection per line::

    {"image_id": "...", "tile": [col, row], "class_id": 1,
     "box": [x_min, y_min, x_max, y_max], "confidence": 0.9}

with boxes in network-input coordinates of the tile. An optional first line
``{"format": "adatile.predictions", ...}`` carries the producing config.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from adatile.core import BBox, area, clip, intersection_ratio
from adatile.dataset import ImageAnnotations
from adatile.tiling import TilePlan, global_to_tile

GRID_DOWNSAMPLE = 8

PREDICTIONS_FORMAT = "adatile.predictions"
FUSED_FORMAT = "adatile.fused"
JSONL_VERSION = 1

_STREAM_BOXES = 0
_STREAM_GRID = 1


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: BBox
    confidence: float
    source_tile: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")

    def sort_key(self) -> tuple:
        b = self.box
        tile = self.source_tile if self.source_tile is not None else (-1, -1)
        return (self.class_id, b.y_min, b.x_min, b.y_max, b.x_max, -self.confidence, tile)


def canonical_order(dets: Iterable[Detection]) -> list[Detection]:
    return sorted(dets, key=Detection.sort_key)


@dataclass
class GridPrediction:
    """Per-cell class scores of a centroid detector, shape ``(n, n, C)`` indexed ``[row, col, c]``.

    Channel ``c`` holds the score for ``class_ids[c]``; no background channel.
    """

    grid_n: int
    scores: np.ndarray
    class_ids: tuple = (1,)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        n = self.grid_n
        if self.scores.shape != (n, n, len(self.class_ids)):
            raise ValueError(f"scores shape {self.scores.shape} != {(n, n, len(self.class_ids))}")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValueError("grid scores must lie in [0, 1]")


@dataclass(frozen=True)
class SimDetectorConfig:
    miss_rate: float = 0.0
    jitter_sigma: float = 0.0
    fp_per_tile: float = 0.0
    visibility_threshold: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.miss_rate < 1.0):
            raise ValueError("miss_rate must lie in [0, 1)")
        if self.jitter_sigma < 0 or self.fp_per_tile < 0:
            raise ValueError("jitter_sigma and fp_per_tile must be >= 0")
        if not (0.0 < self.visibility_threshold <= 1.0):
            raise ValueError("visibility_threshold must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "miss_rate": self.miss_rate,
            "jitter_sigma": self.jitter_sigma,
            "fp_per_tile": self.fp_per_tile,
            "visibility_threshold": self.visibility_threshold,
            "seed": self.seed,
        }


def _tile_rng(seed: int, image_id: str, tile_index, stream: int) -> np.random.Generator:
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    seed = int(seed)
    col, row = (int(v) for v in tile_index)
    entropy = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF, *words, col, row, stream]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _visible(gt: ImageAnnotations, rect: BBox, threshold: float):
    for b, c in zip(gt.boxes, gt.class_ids):
        if area(b) <= 0.0:
            continue
        if intersection_ratio(b, rect) >= threshold:
            yield b, c


def _clamp01(v: float, hi: float) -> float:
    return min(max(v, 0.0), hi)


def simulate_tile(gt: ImageAnnotations, plan: TilePlan, tile_index, cfg: SimDetectorConfig) -> list[Detection]:
    """Box detections for one tile, in that tile's network-input coordinates."""
    tile = plan.tile(tile_index)
    idx = tile.index
    R = float(plan.input_resolution)
    rng = _tile_rng(cfg.seed, plan.image_id, idx, _STREAM_BOXES)
    out = []
    for b, cls in _visible(gt, tile.rect, cfg.visibility_threshold):
        u = rng.random()
        jit = rng.standard_normal(4)
        if u < cfg.miss_rate:
            continue
        tb = global_to_tile(plan, idx, clip(b, tile.rect))
        x0, y0, x1, y1 = (_clamp01(v, R) for v in tb.as_list())
        conf = 1.0
        if cfg.jitter_sigma > 0.0:
            w, h = x1 - x0, y1 - y0
            d = cfg.jitter_sigma * jit
            xs = sorted((_clamp01(x0 + d[0] * w, R), _clamp01(x1 + d[2] * w, R)))
            ys = sorted((_clamp01(y0 + d[1] * h, R), _clamp01(y1 + d[3] * h, R)))
            x0, x1 = xs
            y0, y1 = ys
            conf = min(max(1.0 - float(np.mean(np.abs(d))), 0.5), 1.0)
        out.append(Detection(int(cls), BBox(x0, y0, x1, y1), conf, idx))

    n_fp = rng.poisson(cfg.fp_per_tile) if cfg.fp_per_tile > 0 else 0
    fp_cls = gt.class_ids[0] if gt.class_ids else 1
    max_side = max(GRID_DOWNSAMPLE, R / 6.0)
    for _ in range(n_fp):
        side = rng.uniform(GRID_DOWNSAMPLE, max_side)
        x = rng.uniform(0.0, R - side)
        y = rng.uniform(0.0, R - side)
        conf = float(rng.uniform(0.3, 0.7))
        out.append(Detection(int(fp_cls), BBox(x, y, x + side, y + side), conf, idx))
    return out


def simulate_grid(
    gt: ImageAnnotations,
    plan: TilePlan,
    tile_index,
    cfg: SimDetectorConfig,
    class_ids: Sequence[int] = (1,),
) -> GridPrediction:
    """Centroid-grid output for one tile: one active cell per visible object centre."""
    if plan.input_resolution % GRID_DOWNSAMPLE:
        raise ValueError(f"input resolution {plan.input_resolution} not divisible by {GRID_DOWNSAMPLE}")
    tile = plan.tile(tile_index)
    idx = tile.index
    n = plan.input_resolution // GRID_DOWNSAMPLE
    class_ids = tuple(int(c) for c in class_ids)
    channel = {c: k for k, c in enumerate(class_ids)}
    scores = np.zeros((n, n, len(class_ids)), dtype=np.float64)
    rng = _tile_rng(cfg.seed, plan.image_id, idx, _STREAM_GRID)

    for b, cls in _visible(gt, tile.rect, cfg.visibility_threshold):
        u = rng.random()
        jit = rng.standard_normal(2)
        if u < cfg.miss_rate or cls not in channel:
            continue
        tb = global_to_tile(plan, idx, clip(b, tile.rect))
        cx, cy = tb.center
        conf = 1.0
        if cfg.jitter_sigma > 0.0:
            d = cfg.jitter_sigma * jit
            cx += d[0] * tb.width
            cy += d[1] * tb.height
            conf = min(max(1.0 - float(np.mean(np.abs(d))), 0.5), 1.0)
        col = min(max(int(math.floor(cx / GRID_DOWNSAMPLE)), 0), n - 1)
        row = min(max(int(math.floor(cy / GRID_DOWNSAMPLE)), 0), n - 1)
        k = channel[cls]
        scores[row, col, k] = max(scores[row, col, k], conf)

    n_fp = rng.poisson(cfg.fp_per_tile) if cfg.fp_per_tile > 0 else 0
    for _ in range(n_fp):
        row, col = (int(v) for v in rng.integers(0, n, size=2))
        conf = float(rng.uniform(0.3, 0.7))
        scores[row, col, 0] = max(scores[row, col, 0], conf)
    return GridPrediction(n, scores, class_ids)


# ---------------------------------------------------------------------------
# predictions files
# ---------------------------------------------------------------------------


class PredictionFormatError(ValueError):
    def __init__(self, msg: str, lineno: Optional[int] = None):
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)
        self.lineno = lineno


def detection_to_record(image_id: str, det: Detection, with_tile: bool = True) -> dict:
    rec = {"image_id": image_id}
    if with_tile:
        if det.source_tile is None:
            raise ValueError("per-tile record needs a source tile")
        rec["tile"] = [int(det.source_tile[0]), int(det.source_tile[1])]
    rec["class_id"] = int(det.class_id)
    rec["box"] = det.box.as_list()
    rec["confidence"] = float(det.confidence)
    return rec


def header_record(fmt: str, config: Optional[dict] = None) -> dict:
    return {"format": fmt, "version": JSONL_VERSION, "config": config or {}}


def dumps_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, separators=(", ", ": ")) + "\n" for r in records)


def _iter_records(text: str):
    """Yield ``(lineno, record)``; skips blank lines and a leading format header."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PredictionFormatError(f"malformed JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise PredictionFormatError("record is not an object", lineno)
        if "format" in rec:
            if int(rec.get("version", 0)) > JSONL_VERSION:
                raise PredictionFormatError(f"unsupported version {rec.get('version')}", lineno)
            continue
        yield lineno, rec


def _parse_common(rec: dict, lineno: int):
    try:
        image_id = str(rec["image_id"])
        class_id = int(rec["class_id"])
        box = [float(v) for v in rec["box"]]
        conf = float(rec["confidence"])
    except (KeyError, TypeError, ValueError) as exc:
        raise PredictionFormatError(f"malformed record ({exc!r})", lineno) from None
    if len(box) != 4 or not all(math.isfinite(v) for v in box):
        raise PredictionFormatError(f"box must be 4 finite numbers, got {rec['box']!r}", lineno)
    if box[2] < box[0] or box[3] < box[1]:
        raise PredictionFormatError(f"inverted box {box}", lineno)
    if not (0.0 <= conf <= 1.0):
        raise PredictionFormatError(f"confidence {conf} outside [0, 1]", lineno)
    return image_id, class_id, BBox(*box), conf


def load_external(text: str, plans: Mapping[str, TilePlan], tol: float = 1e-6) -> dict:
    """Parse a predictions file into ``{(image_id, (col, row)): [Detection, ...]}``.

    Every record is validated against the manifest ``plans`` (keyed by image
    id): the image and tile must exist and the box must lie inside the
    network input square. Errors carry the offending line number.
    """
    groups: dict = {}
    for lineno, rec in _iter_records(text):
        image_id, class_id, box, conf = _parse_common(rec, lineno)
        if image_id not in plans:
            raise PredictionFormatError(f"unknown image {image_id!r}", lineno)
        plan = plans[image_id]
        try:
            col, row = (int(v) for v in rec["tile"])
        except (KeyError, TypeError, ValueError):
            raise PredictionFormatError("missing or malformed tile field", lineno) from None
        try:
            plan.tile((col, row))
        except KeyError:
            raise PredictionFormatError(
                f"tile {(col, row)} not in {plan.grid[0]}x{plan.grid[1]} plan of {image_id!r}", lineno
            ) from None
        R = plan.input_resolution
        if min(box.as_list()) < -tol or max(box.as_list()) > R + tol:
            raise PredictionFormatError(f"box {box.as_list()} outside [0, {R}] input coordinates", lineno)
        det = Detection(class_id, box, conf, (col, row))
        groups.setdefault((image_id, (col, row)), []).append(det)
    return groups


def load_fused(text: str) -> dict:
    """Parse a fused-detections file into ``{image_id: [Detection, ...]}`` (global coordinates)."""
    out: dict = {}
    for lineno, rec in _iter_records(text):
        image_id, class_id, box, conf = _parse_common(rec, lineno)
        out.setdefault(image_id, []).append(Detection(class_id, box, conf, None))
    return out
