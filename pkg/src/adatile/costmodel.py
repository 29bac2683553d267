"""Per-image latency, throughput and energy of tiled inference.

Tiles of one image run back to back, so every per-image quantity is the
per-tile figure times the tile count, plus an optional fixed overhead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from adatile.core import NbaLike
from adatile.dataset import ImageAnnotations
from adatile.tiling import DEFAULT_MAX_TILES, ObjectStats, plan_dataset


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    network: str
    input_resolution: Optional[int]
    latency_per_tile: float  # seconds
    energy_per_tile: Optional[float] = None  # joules; None when unreported
    source: str = ""

    def __post_init__(self):
        if not self.latency_per_tile > 0:
            raise ValueError(f"{self.name}: latency per tile must be positive")
        if self.energy_per_tile is not None and self.energy_per_tile < 0:
            raise ValueError(f"{self.name}: energy per tile must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        res = d.get("input_resolution")
        energy = d.get("energy_per_tile")
        return cls(
            name=str(d["name"]),
            network=str(d.get("network", "")),
            input_resolution=None if res is None else int(res),
            latency_per_tile=float(d["latency_per_tile"]),
            energy_per_tile=None if energy is None else float(energy),
            source=str(d.get("source", "")),
        )


@dataclass(frozen=True)
class CostEstimate:
    avg_tiles: float
    latency_per_image: float
    fps: float
    energy_per_image: Optional[float]


def estimate(avg_tiles: float, profile: DeviceProfile, overhead: float = 0.0) -> CostEstimate:
    if not avg_tiles > 0:
        raise ValueError("average tile count must be positive")
    if overhead < 0:
        raise ValueError("overhead must be >= 0")
    latency = avg_tiles * profile.latency_per_tile + overhead
    energy = None if profile.energy_per_tile is None else avg_tiles * profile.energy_per_tile
    return CostEstimate(avg_tiles, latency, 1.0 / latency, energy)


def avg_tiles(
    dataset: Sequence[ImageAnnotations],
    t_nba: NbaLike,
    input_resolution: int,
    override: Optional[ObjectStats] = None,
    max_tiles: int = DEFAULT_MAX_TILES,
) -> float:
    if not dataset:
        raise ValueError("average tile count of an empty dataset is undefined")
    plans = plan_dataset(dataset, t_nba, input_resolution, override=override, max_tiles=max_tiles)
    return sum(p.n_tiles for p in plans) / len(plans)


def load_profiles(path=None) -> dict:
    """Profiles keyed by name; the bundled table unless ``path`` is given."""
    if path is None:
        text = resources.files("adatile").joinpath("data/profiles.json").read_text()
    else:
        text = Path(path).read_text()
    out = {}
    for d in json.loads(text):
        p = DeviceProfile.from_dict(d)
        if p.name in out:
            raise ValueError(f"duplicate profile {p.name!r}")
        out[p.name] = p
    return out


COST_COLUMNS = ("profile", "avg_tiles", "latency_ms", "fps", "energy_mj")


def cost_rows(estimates: Sequence[tuple[str, CostEstimate]]) -> list[dict]:
    rows = []
    for name, e in estimates:
        rows.append({
            "profile": name,
            "avg_tiles": e.avg_tiles,
            "latency_ms": e.latency_per_image * 1e3,
            "fps": e.fps,
            "energy_mj": None if e.energy_per_image is None else e.energy_per_image * 1e3,
        })
    return rows


def format_table(rows: Sequence[dict], columns: Sequence[str], digits: int = 1) -> str:
    """Plain fixed-width table; floats at ``digits`` decimals, missing values as ``-``."""

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.{digits}f}"
        return str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(b[i]) for b in body]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"
