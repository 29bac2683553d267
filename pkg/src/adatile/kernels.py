"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public functions dispatch on :data:`adatile._accel.HAVE_NUMBA`. Both
paths perform the same floating point operations in the same order, so
their outputs are bit-identical; ``tests/test_kernels.py`` checks this.
"""

from __future__ import annotations

import numpy as np

from adatile._accel import HAVE_NUMBA, NUMBA_OPTS, njit

STRATEGY_IOU = 0
STRATEGY_ONE_WAY = 1


# ---------------------------------------------------------------------------
# pairwise box matching
# ---------------------------------------------------------------------------


@njit(**NUMBA_OPTS)
def _match_pairs_jit(boxes, strategy, threshold):
    n = boxes.shape[0]
    out_i = []
    out_j = []
    for i in range(n):
        ax0 = boxes[i, 0]
        ay0 = boxes[i, 1]
        ax1 = boxes[i, 2]
        ay1 = boxes[i, 3]
        area_a = (ax1 - ax0) * (ay1 - ay0)
        for j in range(i + 1, n):
            bx0 = boxes[j, 0]
            by0 = boxes[j, 1]
            bx1 = boxes[j, 2]
            by1 = boxes[j, 3]
            iw = min(ax1, bx1) - max(ax0, bx0)
            ih = min(ay1, by1) - max(ay0, by0)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            area_b = (bx1 - bx0) * (by1 - by0)
            if strategy == 0:
                union = area_a + area_b - inter
                score = inter / union if union > 0.0 else 0.0
            else:
                ra = inter / area_a if area_a > 0.0 else 0.0
                rb = inter / area_b if area_b > 0.0 else 0.0
                score = max(ra, rb)
            if score >= threshold:
                out_i.append(i)
                out_j.append(j)
    res = np.empty((len(out_i), 2), dtype=np.int64)
    for k in range(len(out_i)):
        res[k, 0] = out_i[k]
        res[k, 1] = out_j[k]
    return res


def _match_pairs_numpy(boxes: np.ndarray, strategy: int, threshold: float) -> np.ndarray:
    n = boxes.shape[0]
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    x0, y0, x1, y1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    area = (x1 - x0) * (y1 - y0)
    iw = np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :])
    ih = np.minimum(y1[:, None], y1[None, :]) - np.maximum(y0[:, None], y0[None, :])
    overlap = (iw > 0.0) & (ih > 0.0)
    inter = np.where(overlap, iw * ih, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if strategy == STRATEGY_IOU:
            union = area[:, None] + area[None, :] - inter
            score = np.where(union > 0.0, inter / union, 0.0)
        else:
            ra = np.where(area[:, None] > 0.0, inter / area[:, None], 0.0)
            rb = np.where(area[None, :] > 0.0, inter / area[None, :], 0.0)
            score = np.maximum(ra, rb)
    hit = overlap & (score >= threshold)
    hit = np.triu(hit, k=1)
    ii, jj = np.nonzero(hit)
    return np.stack([ii, jj], axis=1).astype(np.int64)


def pair_hits(boxes: np.ndarray, ii: np.ndarray, jj: np.ndarray, strategy: int, threshold: float) -> np.ndarray:
    """Boolean match flags for explicit candidate pairs, same arithmetic as the full kernels."""
    a = boxes[ii]
    b = boxes[jj]
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    overlap = (iw > 0.0) & (ih > 0.0)
    inter = np.where(overlap, iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        if strategy == STRATEGY_IOU:
            union = area_a + area_b - inter
            score = np.where(union > 0.0, inter / union, 0.0)
        else:
            score = np.maximum(
                np.where(area_a > 0.0, inter / area_a, 0.0),
                np.where(area_b > 0.0, inter / area_b, 0.0),
            )
    return overlap & (score >= threshold)


def match_pairs_array(boxes: np.ndarray, strategy: int, threshold: float) -> np.ndarray:
    """All index pairs ``(i, j)``, ``i < j``, whose overlap score reaches ``threshold``.

    ``boxes`` is an ``(n, 4)`` float64 array of ``x_min, y_min, x_max, y_max``.
    Pairs come back sorted lexicographically. Boxes with zero area contribute
    a directional ratio of 0.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    if HAVE_NUMBA:
        return _match_pairs_jit(boxes, int(strategy), float(threshold))
    return _match_pairs_numpy(boxes, int(strategy), float(threshold))


# ---------------------------------------------------------------------------
# bilinear resampling of uint8 RGB crops
# ---------------------------------------------------------------------------


@njit(**NUMBA_OPTS)
def _resize_jit(img, out_h, out_w):
    h = img.shape[0]
    w = img.shape[1]
    c = img.shape[2]
    out = np.empty((out_h, out_w, c), dtype=np.uint8)
    sy_scale = h / out_h
    sx_scale = w / out_w
    for y in range(out_h):
        sy = (y + 0.5) * sy_scale - 0.5
        sy = min(max(sy, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        wy = sy - y0
        for x in range(out_w):
            sx = (x + 0.5) * sx_scale - 0.5
            sx = min(max(sx, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            wx = sx - x0
            for k in range(c):
                top = img[y0, x0, k] * (1.0 - wx) + img[y0, x1, k] * wx
                bot = img[y1, x0, k] * (1.0 - wx) + img[y1, x1, k] * wx
                v = np.floor(top * (1.0 - wy) + bot * wy + 0.5)
                out[y, x, k] = min(max(v, 0.0), 255.0)
    return out


def _axis_weights(n_src: int, n_dst: int):
    scale = n_src / n_dst
    s = (np.arange(n_dst) + 0.5) * scale - 0.5
    s = np.minimum(np.maximum(s, 0.0), n_src - 1.0)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, s - i0


def _resize_numpy(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    y0, y1, wy = _axis_weights(img.shape[0], out_h)
    x0, x1, wx = _axis_weights(img.shape[1], out_w)
    src = img.astype(np.float64)
    wx_ = wx[None, :, None]
    wy_ = wy[:, None, None]
    top = src[y0][:, x0] * (1.0 - wx_) + src[y0][:, x1] * wx_
    bot = src[y1][:, x0] * (1.0 - wx_) + src[y1][:, x1] * wx_
    v = np.floor(top * (1.0 - wy_) + bot * wy_ + 0.5)
    return np.clip(v, 0.0, 255.0).astype(np.uint8)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample an ``(H, W, C)`` uint8 image with half-pixel-centred bilinear weights."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    if HAVE_NUMBA:
        return _resize_jit(img, int(out_h), int(out_w))
    return _resize_numpy(img, int(out_h), int(out_w))
