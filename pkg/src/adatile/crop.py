"""Binary PPM (P6) I/O and tile crops resampled to the network input."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from adatile.kernels import resize_bilinear
from adatile.tiling import TilePlan


def _tokens(data: bytes, count: int):
    """First ``count`` header tokens of a netpbm file and the offset just past them."""
    out, i, n = [], 0, len(data)
    while len(out) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PPM header")
        out.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def decode_ppm(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), off = _tokens(data, 4)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"only 8-bit PPM supported (maxval {maxval})")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off)
    return raster.reshape(h, w, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


def crop_tile(img: np.ndarray, plan: TilePlan, tile_index) -> np.ndarray:
    """Cut one tile out of ``img`` and resample it to the network input size."""
    if img.shape[0] != plan.dims.height or img.shape[1] != plan.dims.width:
        raise ValueError(
            f"{plan.image_id}: image is {img.shape[1]}x{img.shape[0]}, plan expects {plan.dims.width}x{plan.dims.height}"
        )
    t = plan.tile(tile_index)
    x, y, s = int(t.rect.x_min), int(t.rect.y_min), plan.tile_size
    patch = img[y:y + s, x:x + s]
    R = plan.input_resolution
    return resize_bilinear(patch, R, R)


def crop_name(image_id: str, tile_index) -> str:
    col, row = tile_index
    return f"{image_id}_{col}_{row}.ppm"


def crop_image(img: np.ndarray, plan: TilePlan, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for t in plan.tiles:
        p = out_dir / crop_name(plan.image_id, t.index)
        write_ppm(p, crop_tile(img, plan, t.index))
        paths.append(p)
    return paths
