"""End-to-end composition: plan -> detect -> fuse -> evaluate, and NBA sweeps.

Per-image work fans out over a thread pool. Results are gathered in input
order, so outputs never depend on the pool width.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from adatile.core import BBox, Nba, NbaLike
from adatile.costmodel import DeviceProfile, estimate
from adatile.dataset import ImageAnnotations
from adatile.detector import (
    GRID_DOWNSAMPLE, Detection, SimDetectorConfig, canonical_order, simulate_grid, simulate_tile,
)
from adatile.fusion import FusionConfig, adjacency_fuse, fuse, to_global
from adatile.metrics import EvalReport, MatchMode, evaluate
from adatile.tiling import DEFAULT_MAX_TILES, ObjectStats, TilePlan, plan_dataset

DETECTOR_MODES = ("boxes", "grid")
FUSION_STRATEGIES = ("one_way_ratio", "iou", "adjacency")


def default_workers() -> int:
    return os.cpu_count() or 1


def pmap(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Order-preserving map over a thread pool; ``workers <= 1`` runs inline."""
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def default_match_mode(detector_mode: str) -> MatchMode:
    return MatchMode("centroid_in_box", 0.0) if detector_mode == "grid" else MatchMode("iou_at", 0.5)


def simulate_image(
    ann: ImageAnnotations,
    plan: TilePlan,
    cfg: SimDetectorConfig,
    mode: str = "boxes",
    score_threshold: float = 0.5,
) -> list[Detection]:
    """All per-tile detections of one image in tile-input coordinates, tiles in row-major order.

    In ``grid`` mode every active cell becomes a cell-sized box, which is how
    centroid outputs travel through the predictions file.
    """
    if mode not in DETECTOR_MODES:
        raise ValueError(f"unknown detector mode {mode!r}")
    out = []
    classes = tuple(sorted(set(ann.class_ids))) or (1,)
    for t in plan.tiles:
        if mode == "boxes":
            out.extend(canonical_order(simulate_tile(ann, plan, t.index, cfg)))
            continue
        gp = simulate_grid(ann, plan, t.index, cfg, classes)
        c = GRID_DOWNSAMPLE
        cells = []
        for row in range(gp.grid_n):
            for col in range(gp.grid_n):
                for k, cls in enumerate(gp.class_ids):
                    s = float(gp.scores[row, col, k])
                    if s >= score_threshold:
                        box = BBox(float(col * c), float(row * c), float((col + 1) * c), float((row + 1) * c))
                        cells.append(Detection(cls, box, s, t.index))
        out.extend(cells)
    return out


def fuse_image(plan: TilePlan, tile_dets: Iterable[Detection], strategy: str, cfg: Optional[FusionConfig] = None) -> list[Detection]:
    """Fuse one image's per-tile detections (tile coordinates) into global detections."""
    if strategy == "adjacency":
        by_tile: dict = {}
        for d in tile_dets:
            by_tile.setdefault(d.source_tile, []).append(d)
        out = []
        for idx in sorted(by_tile, key=lambda t: (t[1], t[0])):
            out.extend(adjacency_fuse(to_global(plan, by_tile[idx])))
        return canonical_order(out)
    cfg = cfg if cfg is not None and cfg.strategy == strategy else FusionConfig(strategy)
    return fuse(to_global(plan, tile_dets), cfg)


@dataclass
class SweepRow:
    target_nba: float
    strategy: str
    avg_tiles: float
    report: EvalReport
    fps: Optional[float]

    def as_dict(self) -> dict:
        s = self.report.summary()
        return {
            "target_nba_pct": round(self.target_nba * 100.0, 10),
            "strategy": self.strategy,
            "avg_tiles": self.avg_tiles,
            "f1": s["f1"],
            "precision": s["precision"],
            "recall": s["recall"],
            "count_mae": s["count_mae"],
            "fps": self.fps,
        }


SWEEP_COLUMNS = ("target_nba_pct", "strategy", "avg_tiles", "f1", "precision", "recall", "count_mae", "fps")


def run_pipeline(
    dataset: Sequence[ImageAnnotations],
    plans: Sequence[TilePlan],
    sim: SimDetectorConfig,
    strategy: str,
    fusion: Optional[FusionConfig] = None,
    mode: str = "boxes",
    match: Optional[MatchMode] = None,
    score_threshold: float = 0.5,
    workers: Optional[int] = None,
    config: Optional[dict] = None,
) -> EvalReport:
    """Simulate, fuse and evaluate every image of ``dataset`` under precomputed ``plans``."""
    match = match or default_match_mode(mode)

    def one(k: int):
        ann, plan = dataset[k], plans[k]
        dets = simulate_image(ann, plan, sim, mode, score_threshold)
        return fuse_image(plan, dets, strategy, fusion)

    fused = pmap(one, range(len(dataset)), workers)
    preds = {a.image_id: f for a, f in zip(dataset, fused)}
    return evaluate(preds, dataset, match, config)


def sweep(
    dataset: Sequence[ImageAnnotations],
    nba_list: Sequence[NbaLike],
    strategies: Sequence[str],
    input_resolution: int,
    sim: SimDetectorConfig,
    mode: str = "boxes",
    match: Optional[MatchMode] = None,
    thresholds: Optional[dict] = None,
    reduce_policy: str = "largest_box",
    profile: Optional[DeviceProfile] = None,
    override: Optional[ObjectStats] = None,
    score_threshold: float = 0.5,
    max_tiles: int = DEFAULT_MAX_TILES,
    workers: Optional[int] = None,
) -> list[SweepRow]:
    """One results row per ``(target NBA, strategy)`` pair."""
    thresholds = thresholds or {}
    for s in strategies:
        if s not in FUSION_STRATEGIES:
            raise ValueError(f"unknown fusion strategy {s!r}")
        if s == "adjacency" and mode != "grid":
            raise ValueError("adjacency fusion needs grid (centroid) detections")
    rows = []
    for t in nba_list:
        t_nba = Nba.parse(t).value
        plans = plan_dataset(dataset, t_nba, input_resolution, override=override, max_tiles=max_tiles)
        tiles = sum(p.n_tiles for p in plans) / len(plans)
        fps = estimate(tiles, profile).fps if profile is not None else None
        for s in strategies:
            cfg = None if s == "adjacency" else FusionConfig(s, thresholds.get(s), reduce_policy)
            report = run_pipeline(dataset, plans, sim, s, cfg, mode, match, score_threshold, workers)
            rows.append(SweepRow(t_nba, s, tiles, report, fps))
    return rows
