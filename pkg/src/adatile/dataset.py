"""Ground-truth ingestion, the canonical dataset file, and a synthetic generator.

CARPK-style annotation files carry one object per line::

    x1 y1 x2 y2 [class]

whitespace separated, class defaulting to 1, blank lines ignored. Internally
everything is converted to :class:`ImageAnnotations` and persisted as JSON.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from adatile.core import BBox, ImageDims

logger = logging.getLogger(__name__)

DATASET_FORMAT = "adatile.dataset"
DATASET_VERSION = 1

#: CARPK frames are 1280x720; used when no per-image dimension index exists.
CARPK_DIMS = ImageDims(1280, 720)


class AnnotationFormatError(ValueError):
    """Malformed annotation text; ``lineno`` is 1-based."""

    def __init__(self, msg: str, lineno: Optional[int] = None, source: Optional[str] = None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + msg)
        self.lineno = lineno
        self.source = source


@dataclass(frozen=True)
class ImageAnnotations:
    image_id: str
    dims: ImageDims
    boxes: tuple = ()
    class_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.class_ids:
            object.__setattr__(self, "class_ids", (1,) * len(self.boxes))
        else:
            object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        if len(self.class_ids) != len(self.boxes):
            raise ValueError(f"{self.image_id}: {len(self.boxes)} boxes but {len(self.class_ids)} class ids")
        w, h = self.dims.width, self.dims.height
        for b in self.boxes:
            if b.x_min < 0 or b.y_min < 0 or b.x_max > w or b.y_max > h:
                raise ValueError(f"{self.image_id}: box {b.as_list()} outside {w}x{h} image")

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def clamp(cls, image_id: str, dims: ImageDims, objects: Iterable[tuple[BBox, int]]) -> "ImageAnnotations":
        """Build annotations, clamping boxes into the image and dropping empty ones."""
        boxes, classes = [], []
        W, H = float(dims.width), float(dims.height)
        for b, c in objects:
            x0, x1 = min(max(b.x_min, 0.0), W), min(max(b.x_max, 0.0), W)
            y0, y1 = min(max(b.y_min, 0.0), H), min(max(b.y_max, 0.0), H)
            if x1 <= x0 or y1 <= y0:
                logger.warning("%s: dropping box %s, empty after clamping", image_id, b.as_list())
                continue
            boxes.append(BBox(x0, y0, x1, y1))
            classes.append(c)
        return cls(image_id, dims, tuple(boxes), tuple(classes))


# ---------------------------------------------------------------------------
# annotation text grammar
# ---------------------------------------------------------------------------


def parse_annotation_file(text: str, swap_corners: bool = False, source: Optional[str] = None) -> list[tuple[BBox, int]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.replace(",", " ").split()
        if not fields:
            continue
        if len(fields) not in (4, 5):
            raise AnnotationFormatError(f"expected 4 or 5 fields, got {len(fields)}", lineno, source)
        try:
            nums = [float(f) for f in fields]
        except ValueError:
            raise AnnotationFormatError(f"non-numeric field in {line.strip()!r}", lineno, source) from None
        if not all(math.isfinite(v) for v in nums):
            raise AnnotationFormatError("non-finite coordinate", lineno, source)
        x1, y1, x2, y2 = nums[:4]
        cls = 1
        if len(nums) == 5:
            if nums[4] != int(nums[4]):
                raise AnnotationFormatError(f"class must be an integer, got {fields[4]!r}", lineno, source)
            cls = int(nums[4])
        if x2 < x1 or y2 < y1:
            if not swap_corners:
                raise AnnotationFormatError(f"inverted corners {fields[:4]}", lineno, source)
            x1, x2 = min(x1, x2), max(x1, x2)
            y1, y2 = min(y1, y2), max(y1, y2)
        out.append((BBox(x1, y1, x2, y2), cls))
    return out


def _fmt_num(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def serialize_annotation_file(objects: Iterable[tuple[BBox, int]]) -> str:
    lines = []
    for b, c in objects:
        lines.append(" ".join(_fmt_num(v) for v in b.as_list()) + f" {int(c)}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------


def annotations_to_record(ann: ImageAnnotations) -> dict:
    return {
        "image_id": ann.image_id,
        "width": ann.dims.width,
        "height": ann.dims.height,
        "boxes": [b.as_list() + [c] for b, c in zip(ann.boxes, ann.class_ids)],
    }


def annotations_from_record(rec: dict) -> ImageAnnotations:
    dims = ImageDims(int(rec["width"]), int(rec["height"]))
    boxes, classes = [], []
    for row in rec.get("boxes", []):
        if len(row) not in (4, 5):
            raise ValueError(f"{rec['image_id']}: box record must have 4 or 5 numbers, got {row!r}")
        boxes.append(BBox.from_seq(row[:4]))
        classes.append(int(row[4]) if len(row) == 5 else 1)
    return ImageAnnotations(str(rec["image_id"]), dims, tuple(boxes), tuple(classes))


def check_unique_ids(dataset: Sequence[ImageAnnotations]) -> None:
    seen = set()
    for ann in dataset:
        if ann.image_id in seen:
            raise ValueError(f"duplicate image id {ann.image_id!r}")
        seen.add(ann.image_id)


def dataset_to_json(dataset: Sequence[ImageAnnotations], config: Optional[dict] = None) -> str:
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "config": config or {},
        "images": [annotations_to_record(a) for a in dataset],
    }
    return json.dumps(doc, indent=1) + "\n"


def dataset_from_json(text: str) -> list[ImageAnnotations]:
    doc = json.loads(text)
    if doc.get("format") != DATASET_FORMAT:
        raise ValueError(f"not a dataset file (format={doc.get('format')!r})")
    if int(doc.get("version", 0)) > DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {doc.get('version')}")
    out = [annotations_from_record(r) for r in doc["images"]]
    check_unique_ids(out)
    return out


def save_dataset(path, dataset: Sequence[ImageAnnotations], config: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dataset_to_json(dataset, config))


def read_dataset(path) -> list[ImageAnnotations]:
    return dataset_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# CARPK-style directory layout
# ---------------------------------------------------------------------------


def load_dataset(
    root,
    split: str,
    dims: Optional[ImageDims] = None,
    swap_corners: bool = False,
) -> list[ImageAnnotations]:
    """Load a split from a CARPK-style tree.

    Layout::

        root/ImageSets/<split>.txt      image ids, one per line
        root/Annotations/<id>.txt       annotation text per image
        root/image_dims.json            optional {"<id>": [width, height]}

    Without the dimension index, ``dims`` (default 1280x720) applies to all
    images.
    """
    root = Path(root)
    split_file = root / "ImageSets" / f"{split}.txt"
    ids = [ln.strip() for ln in split_file.read_text().splitlines() if ln.strip()]
    index_file = root / "image_dims.json"
    index = json.loads(index_file.read_text()) if index_file.exists() else {}
    fixed = dims or CARPK_DIMS

    out, seen = [], set()
    for image_id in ids:
        if image_id in seen:
            raise ValueError(f"duplicate image id {image_id!r} in {split_file}")
        seen.add(image_id)
        ann_file = root / "Annotations" / f"{image_id}.txt"
        if not ann_file.exists():
            raise FileNotFoundError(f"missing annotation file for image {image_id!r}: {ann_file}")
        objects = parse_annotation_file(ann_file.read_text(), swap_corners=swap_corners, source=str(ann_file))
        if image_id in index:
            w, h = index[image_id]
            image_dims = ImageDims(int(w), int(h))
        else:
            image_dims = fixed
        out.append(ImageAnnotations.clamp(image_id, image_dims, objects))
    return out


# ---------------------------------------------------------------------------
# synthetic parking lots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    width: int = 1280
    height: int = 720
    n_images: int = 10
    count_range: tuple = (20, 200)
    extent_range: tuple = (20, 40)
    min_spacing: float = 0.0
    seed: int = 0
    layout: str = "random"  # "random" or "rows"
    max_attempts: int = 2000
    class_id: int = 1

    def __post_init__(self):
        ImageDims(self.width, self.height)
        lo, hi = self.count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad count range {self.count_range}")
        elo, ehi = self.extent_range
        if elo <= 0 or ehi < elo:
            raise ValueError(f"bad extent range {self.extent_range}")
        if ehi > min(self.width, self.height):
            raise ValueError("object extent exceeds the image")
        if self.min_spacing < 0:
            raise ValueError("min_spacing must be >= 0")
        if self.layout not in ("random", "rows"):
            raise ValueError(f"unknown layout {self.layout!r}")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "n_images": self.n_images,
            "count_range": list(self.count_range),
            "extent_range": list(self.extent_range),
            "min_spacing": self.min_spacing,
            "seed": self.seed,
            "layout": self.layout,
        }


def _place_random(rng: np.random.Generator, cfg: SynthConfig, count: int, image_id: str) -> list[BBox]:
    elo, ehi = cfg.extent_range
    s = cfg.min_spacing
    placed = np.empty((count, 4), dtype=np.float64)
    n = 0
    for _ in range(count):
        for _attempt in range(cfg.max_attempts):
            w, h = rng.integers(elo, ehi + 1, size=2)
            x = rng.integers(0, cfg.width - w + 1)
            y = rng.integers(0, cfg.height - h + 1)
            if n:
                p = placed[:n]
                clash = (x < p[:, 2] + s) & (p[:, 0] < x + w + s) & (y < p[:, 3] + s) & (p[:, 1] < y + h + s)
                if clash.any():
                    continue
            placed[n] = (x, y, x + w, y + h)
            n += 1
            break
        else:
            raise ValueError(
                f"{image_id}: could not place object {n + 1} of {count} after {cfg.max_attempts} attempts"
            )
    return [BBox(*map(float, row)) for row in placed]


def _place_rows(rng: np.random.Generator, cfg: SynthConfig, count: int, image_id: str) -> list[BBox]:
    """Rows of cars parked side by side; neighbours within a row touch when min_spacing is 0."""
    elo, ehi = cfg.extent_range
    gap = cfg.min_spacing
    aisle = max(gap, float(ehi) / 2)
    boxes: list[BBox] = []
    y = float(rng.integers(0, ehi))
    while len(boxes) < count:
        if y + ehi > cfg.height:
            raise ValueError(f"{image_id}: rows layout cannot fit {count} objects")
        x = float(rng.integers(0, ehi))
        while len(boxes) < count:
            w, h = (float(v) for v in rng.integers(elo, ehi + 1, size=2))
            if x + w > cfg.width:
                break
            boxes.append(BBox(x, y, x + w, y + h))
            x += w + gap
        y += ehi + aisle
    return boxes


def synth_generate(cfg: SynthConfig) -> list[ImageAnnotations]:
    """Deterministic synthetic dataset; identical config gives identical output."""
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.count_range
    dims = ImageDims(cfg.width, cfg.height)
    out = []
    for i in range(cfg.n_images):
        image_id = f"synth_{i:05d}"
        count = int(rng.integers(lo, hi + 1))
        if cfg.layout == "rows":
            boxes = _place_rows(rng, cfg, count, image_id)
        else:
            boxes = _place_random(rng, cfg, count, image_id)
        out.append(ImageAnnotations(image_id, dims, tuple(boxes), (cfg.class_id,) * len(boxes)))
    return out
