"""Counting and detection metrics, plus the soft-F1 loss used to train centroid grids."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from adatile.core import BBox, iou
from adatile.dataset import ImageAnnotations
from adatile.detector import Detection, GridPrediction

SOFT_F1_EPS = 1e-7

REPORT_FORMAT = "adatile.report"
REPORT_VERSION = 1
CSV_COLUMNS = ("image_id", "tp", "fp", "fn", "pred_count", "gt_count")


# ---------------------------------------------------------------------------
# matching predictions to ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchMode:
    """``centroid_in_box`` or ``iou_at`` with its threshold."""

    kind: str = "iou_at"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("centroid_in_box", "iou_at"):
            raise ValueError(f"unknown match mode {self.kind!r}")
        if self.kind == "iou_at" and not (0.0 < self.threshold <= 1.0):
            raise ValueError("iou threshold must lie in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "MatchMode":
        """``"centroid"``, ``"centroid_in_box"``, ``"iou"`` or ``"iou@0.3"``."""
        t = text.strip().lower()
        if t in ("centroid", "centroid_in_box"):
            return cls("centroid_in_box", 0.0)
        if t in ("iou", "iou_at"):
            return cls("iou_at", 0.5)
        if t.startswith("iou@") or t.startswith("iou_at@"):
            return cls("iou_at", float(t.split("@", 1)[1]))
        raise ValueError(f"cannot parse match mode {text!r}")

    def to_dict(self) -> dict:
        if self.kind == "centroid_in_box":
            return {"kind": self.kind}
        return {"kind": self.kind, "threshold": self.threshold}


@dataclass
class Matching:
    pairs: list  # (pred_index, gt_index) in input index space
    n_pred: int
    n_gt: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return self.n_pred - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def match_to_gt(preds: Sequence[Detection], gt: Union[ImageAnnotations, Sequence[BBox]], mode: MatchMode = MatchMode()) -> Matching:
    """Greedy one-to-one matching, most confident prediction first.

    Ties in confidence are broken by canonical box order, so the result does
    not depend on the input order. Class labels must agree when ``gt`` is an
    :class:`ImageAnnotations`.
    """
    if isinstance(gt, ImageAnnotations):
        gt_boxes, gt_cls = list(gt.boxes), list(gt.class_ids)
    else:
        gt_boxes, gt_cls = list(gt), None
    order = sorted(range(len(preds)), key=lambda k: (-preds[k].confidence,) + preds[k].sort_key())
    taken = [False] * len(gt_boxes)
    pairs = []
    for k in order:
        p = preds[k]
        best, best_score = -1, -math.inf
        if mode.kind == "centroid_in_box":
            cx, cy = p.box.center
            for g, b in enumerate(gt_boxes):
                if taken[g] or (gt_cls is not None and gt_cls[g] != p.class_id):
                    continue
                if not b.contains_point(cx, cy):
                    continue
                gx, gy = b.center
                score = -((gx - cx) ** 2 + (gy - cy) ** 2)
                if score > best_score:
                    best, best_score = g, score
        else:
            for g, b in enumerate(gt_boxes):
                if taken[g] or (gt_cls is not None and gt_cls[g] != p.class_id):
                    continue
                score = iou(p.box, b)
                if score >= mode.threshold and score > best_score:
                    best, best_score = g, score
        if best >= 0:
            taken[best] = True
            pairs.append((k, best))
    return Matching(sorted(pairs), len(preds), len(gt_boxes))


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1 with 0/0 taken as 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def count_mae(counts: Sequence[tuple[int, int]]) -> float:
    """Mean absolute difference over ``(pred_count, gt_count)`` pairs."""
    if not counts:
        raise ValueError("count MAE of an empty list is undefined")
    return math.fsum(abs(p - g) for p, g in counts) / len(counts)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ImageResult:
    image_id: str
    tp: int
    fp: int
    fn: int

    @property
    def pred_count(self) -> int:
        return self.tp + self.fp

    @property
    def gt_count(self) -> int:
        return self.tp + self.fn


@dataclass
class EvalReport:
    images: list
    config: dict = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return sum(r.tp for r in self.images)

    @property
    def fp(self) -> int:
        return sum(r.fp for r in self.images)

    @property
    def fn(self) -> int:
        return sum(r.fn for r in self.images)

    @property
    def precision(self) -> float:
        return prf1(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf1(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return prf1(self.tp, self.fp, self.fn)[2]

    @property
    def count_mae(self) -> float:
        return count_mae([(r.pred_count, r.gt_count) for r in self.images])

    def summary(self) -> dict:
        return {
            "images": len(self.images),
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "count_mae": self.count_mae,
        }

    def to_json(self) -> str:
        per_image = []
        for r in self.images:
            p, rc, f = prf1(r.tp, r.fp, r.fn)
            per_image.append({
                "image_id": r.image_id, "tp": r.tp, "fp": r.fp, "fn": r.fn,
                "pred_count": r.pred_count, "gt_count": r.gt_count,
                "precision": p, "recall": rc, "f1": f,
            })
        doc = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config": self.config,
            "aggregate": self.summary(),
            "per_image": per_image,
        }
        return json.dumps(doc, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.images:
            w.writerow([r.image_id, r.tp, r.fp, r.fn, r.pred_count, r.gt_count])
        return buf.getvalue()


def evaluate(
    preds: dict,
    dataset: Sequence[ImageAnnotations],
    mode: MatchMode = MatchMode(),
    config: Optional[dict] = None,
) -> EvalReport:
    """Score fused predictions ``{image_id: [Detection]}`` against every image in ``dataset``."""
    known = {a.image_id for a in dataset}
    stray = sorted(set(preds) - known)
    if stray:
        raise ValueError(f"predictions reference unknown images: {stray[:5]}")
    results = []
    for ann in dataset:
        m = match_to_gt(preds.get(ann.image_id, []), ann, mode)
        results.append(ImageResult(ann.image_id, m.tp, m.fp, m.fn))
    cfg = dict(config or {})
    cfg.setdefault("match", mode.to_dict())
    return EvalReport(results, cfg)


# ---------------------------------------------------------------------------
# soft F1
# ---------------------------------------------------------------------------


@dataclass
class LossResult:
    loss: float
    gradient: np.ndarray


def _class_view(a: np.ndarray) -> np.ndarray:
    """Reshape to ``(cells, classes)``: the last axis is the class axis for 3-D grids, otherwise one class."""
    if a.ndim >= 3:
        return a.reshape(-1, a.shape[-1])
    return a.reshape(-1, 1)


def soft_f1_loss(scores: Union[GridPrediction, np.ndarray], targets: np.ndarray, eps: float = SOFT_F1_EPS) -> LossResult:
    """``1 - mean_c softF1_c`` with its closed-form gradient with respect to the scores.

    Per class, with soft counts ``tp = sum p*y``, ``fp = sum p*(1-y)`` and
    ``fn = sum (1-p)*y``::

        softF1 = 2 tp / (2 tp + fp + fn + eps) = 2 S_py / (S_p + S_y + eps)

    so ``d softF1 / d p_i = (2 y_i D - N) / D**2`` with ``N = 2 S_py`` and
    ``D = S_p + S_y + eps``.

    ``scores`` of shape ``(n, n, C)`` average over ``C`` classes; 1-D and
    2-D inputs are treated as a single class.
    """
    p = scores.scores if isinstance(scores, GridPrediction) else np.asarray(scores, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: scores {p.shape} vs targets {y.shape}")
    if p.size == 0:
        raise ValueError("empty score array")
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("scores must lie in [0, 1]")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("targets must be 0 or 1")

    P = _class_view(p)
    Y = _class_view(y)
    n_cls = P.shape[1]
    s_py = np.sum(P * Y, axis=0)
    D = np.sum(P, axis=0) + np.sum(Y, axis=0) + eps
    N = 2.0 * s_py
    f1 = N / D
    loss = 1.0 - float(np.mean(f1))
    dF = (2.0 * Y * D - N) / (D * D)
    grad = (-dF / n_cls).reshape(p.shape)
    return LossResult(loss, grad)
