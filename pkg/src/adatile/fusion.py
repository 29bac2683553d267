"""Fusing per-tile detections into one detection set per image.

Overlapping tiles see border objects twice, usually once clipped and once
whole. Detections are matched pairwise (IoU, or the one-way intersection
ratio that tolerates a small box sitting inside a big one), matches are
closed transitively with union-find, and each connected cluster is reduced
to a single representative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from adatile import kernels
from adatile.core import BBox, area, boxes_to_array
from adatile.detector import GRID_DOWNSAMPLE, Detection, GridPrediction, canonical_order
from adatile.tiling import TilePlan, tile_to_global

STRATEGIES = {"iou": kernels.STRATEGY_IOU, "one_way_ratio": kernels.STRATEGY_ONE_WAY}
DEFAULT_THRESHOLDS = {"iou": 0.25, "one_way_ratio": 0.8}
REDUCE_POLICIES = ("largest_box", "max_confidence")


@dataclass(frozen=True)
class FusionConfig:
    strategy: str = "one_way_ratio"
    threshold: Optional[float] = None
    reduce_policy: str = "largest_box"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown fusion strategy {self.strategy!r}")
        if self.threshold is None:
            object.__setattr__(self, "threshold", DEFAULT_THRESHOLDS[self.strategy])
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError(f"fusion threshold must lie in (0, 1], got {self.threshold}")
        if self.reduce_policy not in REDUCE_POLICIES:
            raise ValueError(f"unknown reduce policy {self.reduce_policy!r}")

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "threshold": self.threshold, "reduce_policy": self.reduce_policy}


class UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, u: int) -> int:
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u: int, v: int) -> None:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return
        if self.rank[ru] < self.rank[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        if self.rank[ru] == self.rank[rv]:
            self.rank[ru] += 1


def to_global(plan: TilePlan, dets: Iterable[Detection]) -> list[Detection]:
    """Remap tile-input-coordinate detections into image coordinates."""
    return [Detection(d.class_id, tile_to_global(plan, d.source_tile, d.box), d.confidence, d.source_tile) for d in dets]


def pseudo_boxes(gp: GridPrediction, plan: TilePlan, tile_index, score_threshold: float = 0.5) -> list[Detection]:
    """One cell-sized box per grid cell whose score reaches ``score_threshold``, in image coordinates."""
    if gp.grid_n * GRID_DOWNSAMPLE != plan.input_resolution:
        raise ValueError(f"grid of {gp.grid_n} cells does not match input resolution {plan.input_resolution}")
    idx = plan.tile(tile_index).index
    c = GRID_DOWNSAMPLE
    out = []
    rows, cols, chans = np.nonzero(gp.scores >= score_threshold)
    for r, col, k in zip(rows.tolist(), cols.tolist(), chans.tolist()):
        cell = BBox(float(col * c), float(r * c), float((col + 1) * c), float((r + 1) * c))
        out.append(Detection(int(gp.class_ids[k]), tile_to_global(plan, idx, cell), float(gp.scores[r, col, k]), idx))
    return out


def adjacency_fuse(dets: Sequence[Detection]) -> list[Detection]:
    """Join pseudo-boxes of one grid whose cells touch, including diagonally.

    Each 8-connected group becomes its union bounding box with the highest
    member confidence. This is the crude clustering of the stock centroid
    detector, kept as an ablation baseline.
    """
    dets = canonical_order(dets)
    n = len(dets)
    if n == 0:
        return []
    boxes = boxes_to_array([d.box for d in dets])
    scale = float(np.max(boxes[:, 2:] - boxes[:, :2]))
    tol = 1e-9 * max(scale, 1.0)
    cls = np.array([d.class_id for d in dets])
    iw = np.minimum(boxes[:, None, 2], boxes[None, :, 2]) - np.maximum(boxes[:, None, 0], boxes[None, :, 0])
    ih = np.minimum(boxes[:, None, 3], boxes[None, :, 3]) - np.maximum(boxes[:, None, 1], boxes[None, :, 1])
    touch = (iw >= -tol) & (ih >= -tol) & (cls[:, None] == cls[None, :])
    ii, jj = np.nonzero(np.triu(touch, k=1))
    out = []
    for members in cluster(n, zip(ii.tolist(), jj.tolist())):
        group = [dets[m] for m in members]
        b = BBox(
            min(d.box.x_min for d in group), min(d.box.y_min for d in group),
            max(d.box.x_max for d in group), max(d.box.y_max for d in group),
        )
        out.append(Detection(group[0].class_id, b, max(d.confidence for d in group), group[0].source_tile))
    return canonical_order(out)


def _indexed_pairs(boxes: np.ndarray, strategy: int, threshold: float) -> np.ndarray:
    """Same result as :func:`kernels.match_pairs_array` using a uniform-grid candidate filter."""
    n = boxes.shape[0]
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    extent = float(np.max(boxes[:, 2:] - boxes[:, :2]))
    cell = max(extent, 1e-9)
    lo = np.floor(boxes[:, :2] / cell).astype(np.int64)
    hi = np.floor(boxes[:, 2:] / cell).astype(np.int64)
    buckets: dict = {}
    for i in range(n):
        for gx in range(lo[i, 0], hi[i, 0] + 1):
            for gy in range(lo[i, 1], hi[i, 1] + 1):
                buckets.setdefault((gx, gy), []).append(i)
    cand = set()
    for members in buckets.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                cand.add((members[a], members[b]))
    if not cand:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.array(sorted(cand), dtype=np.int64)
    hit = kernels.pair_hits(boxes, pairs[:, 0], pairs[:, 1], strategy, threshold)
    return pairs[hit]


def match_pairs(dets: Sequence[Detection], cfg: FusionConfig, use_index: bool = False) -> list[tuple[int, int]]:
    """Matching index pairs ``(i, j)`` with ``i < j``, same class only, in sorted order."""
    strategy = STRATEGIES[cfg.strategy]
    by_class: dict = {}
    for k, d in enumerate(dets):
        by_class.setdefault(d.class_id, []).append(k)
    pairs = []
    for idx in by_class.values():
        boxes = boxes_to_array([dets[k].box for k in idx])
        if use_index:
            local = _indexed_pairs(boxes, strategy, cfg.threshold)
        else:
            local = kernels.match_pairs_array(boxes, strategy, cfg.threshold)
        pairs.extend((idx[a], idx[b]) for a, b in local.tolist())
    return sorted(pairs)


def cluster(n: int, pairs: Iterable[tuple[int, int]]) -> list[list[int]]:
    """Connected components over ``range(n)``, ordered by smallest member."""
    uf = UnionFind(n)
    for i, j in pairs:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"pair {(i, j)} out of range for {n} items")
        uf.union(i, j)
    groups: dict = {}
    for k in range(n):
        groups.setdefault(uf.find(k), []).append(k)
    return sorted(groups.values(), key=lambda g: g[0])


def reduce(members: Sequence[Detection], policy: str = "largest_box") -> Detection:
    if not members:
        raise ValueError("cannot reduce an empty cluster")
    if policy == "largest_box":
        primary = lambda d: -area(d.box)  # noqa: E731
    elif policy == "max_confidence":
        primary = lambda d: -d.confidence  # noqa: E731
    else:
        raise ValueError(f"unknown reduce policy {policy!r}")

    def key(d: Detection):
        tile = d.source_tile if d.source_tile is not None else (-1, -1)
        return (primary(d), d.box.y_min, d.box.x_min, tile) + d.sort_key()

    best = min(members, key=key)
    conf = max(d.confidence for d in members)
    return Detection(best.class_id, best.box, conf, best.source_tile)


def fuse(dets: Iterable[Detection], cfg: FusionConfig = FusionConfig(), use_index: bool = False) -> list[Detection]:
    """Match, cluster and reduce. Output is in canonical order."""
    dets = canonical_order(dets)
    pairs = match_pairs(dets, cfg, use_index=use_index)
    out = [reduce([dets[k] for k in group], cfg.reduce_policy) for group in cluster(len(dets), pairs)]
    return canonical_order(out)


def fuse_grid_image(plan: TilePlan, grids: dict, cfg: Optional[FusionConfig], score_threshold: float = 0.5) -> list[Detection]:
    """Pseudo-box pipeline for centroid grids; ``cfg=None`` selects per-grid adjacency fusion."""
    out = []
    for idx in sorted(grids, key=lambda t: (t[1], t[0])):
        boxes = pseudo_boxes(grids[idx], plan, idx, score_threshold)
        out.extend(adjacency_fuse(boxes) if cfg is None else boxes)
    if cfg is None:
        return canonical_order(out)
    return fuse(out, cfg)

