"""Geometric primitives: boxes, image dimensions, normalized areas.

Coordinates are continuous pixels in the image frame (origin top-left,
x to the right, y down). Areas are plain ``(max - min)`` products with no
``+1`` pixel convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np


@dataclass(frozen=True, order=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        x0, y0, x1, y1 = float(self.x_min), float(self.y_min), float(self.x_max), float(self.y_max)
        d = self.__dict__
        d["x_min"], d["y_min"], d["x_max"], d["y_max"] = x0, y0, x1, y1
        if not (math.isfinite(x0) and math.isfinite(y0) and math.isfinite(x1) and math.isfinite(y1)):
            raise ValueError(f"non-finite box coordinate in {self!r}")
        if x1 < x0 or y1 < y0:
            raise ValueError(f"negative box extent: {self!r}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    @classmethod
    def from_seq(cls, seq) -> "BBox":
        x0, y0, x1, y1 = (float(v) for v in seq)
        return cls(x0, y0, x1, y1)


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError(f"image dimensions must be integers: {self!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive: {self!r}")

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def rect(self) -> BBox:
        return BBox(0.0, 0.0, float(self.width), float(self.height))


@dataclass(frozen=True)
class Nba:
    """Normalized bounding-box area: a box area divided by the image area."""

    value: float

    def __post_init__(self):
        if not (0.0 < self.value <= 1.0) or not math.isfinite(self.value):
            raise ValueError(f"NBA must lie in (0, 1], got {self.value!r}")

    def __float__(self) -> float:
        return self.value

    @classmethod
    def parse(cls, text: Union[str, float, "Nba"]) -> "Nba":
        """Accept ``"0.8%"`` (percent) or ``"0.008"`` / ``0.008`` (fraction)."""
        if isinstance(text, Nba):
            return text
        if isinstance(text, str):
            s = text.strip()
            if s.endswith("%"):
                return cls(float(s[:-1]) / 100.0)
            return cls(float(s))
        return cls(float(text))

    @property
    def percent(self) -> float:
        return self.value * 100.0


NbaLike = Union[Nba, float, str]


def as_nba(x: NbaLike) -> float:
    return Nba.parse(x).value


def area(b: BBox) -> float:
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def _intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when the union has no area."""
    inter = _intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def intersection_ratio(a: BBox, b: BBox) -> float:
    """Fraction of ``a``'s own area that lies inside ``b``.

    Directional: ``intersection_ratio(a, b) != intersection_ratio(b, a)`` in
    general. Raises ``ValueError`` when ``a`` has zero area.
    """
    own = area(a)
    if own <= 0.0:
        raise ValueError(f"intersection ratio undefined for zero-area box {a!r}")
    return _intersection_area(a, b) / own


def clip(b: BBox, r: BBox) -> Optional[BBox]:
    """Intersection rectangle of ``b`` and ``r``, or ``None`` if they are disjoint.

    Boxes that merely touch give a degenerate (zero-area) rectangle.
    """
    x0 = max(b.x_min, r.x_min)
    y0 = max(b.y_min, r.y_min)
    x1 = min(b.x_max, r.x_max)
    y1 = min(b.y_max, r.y_max)
    if x1 < x0 or y1 < y0:
        return None
    return BBox(x0, y0, x1, y1)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack BBoxes into an ``(n, 4)`` float64 array."""
    if not boxes:
        return np.empty((0, 4), dtype=np.float64)
    return np.array([(b.x_min, b.y_min, b.x_max, b.y_max) for b in boxes], dtype=np.float64)
