import os
import subprocess
import sys

import numpy as np
import pytest

from adatile import kernels
from adatile._accel import HAVE_NUMBA
from adatile.kernels import STRATEGY_IOU, STRATEGY_ONE_WAY, match_pairs_array, resize_bilinear

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed or disabled")


def random_boxes(rng, n, span=200.0):
    xy = rng.uniform(0, span, (n, 2))
    wh = rng.uniform(0, 40, (n, 2))
    wh[rng.random(n) < 0.05] = 0.0  # some zero-area boxes
    return np.hstack([xy, xy + wh])


def resize_reference(img, out_h, out_w):
    """Scalar transcription of half-pixel bilinear sampling."""
    h, w, c = img.shape
    out = np.zeros((out_h, out_w, c), dtype=np.uint8)
    for y in range(out_h):
        sy = min(max((y + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for x in range(out_w):
            sx = min(max((x + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for k in range(c):
                v = (float(img[y0, x0, k]) * (1 - fx) * (1 - fy) + float(img[y0, x1, k]) * fx * (1 - fy)
                     + float(img[y1, x0, k]) * (1 - fx) * fy + float(img[y1, x1, k]) * fx * fy)
                out[y, x, k] = int(np.floor(v + 0.5))
    return out


class TestMatchKernels:
    @pytest.mark.parametrize("strategy", [STRATEGY_IOU, STRATEGY_ONE_WAY])
    def test_numpy_against_loops(self, strategy):
        rng = np.random.default_rng(0)
        b = random_boxes(rng, 80)
        th = 0.3
        expected = []
        for i in range(len(b)):
            for j in range(i + 1, len(b)):
                iw = min(b[i, 2], b[j, 2]) - max(b[i, 0], b[j, 0])
                ih = min(b[i, 3], b[j, 3]) - max(b[i, 1], b[j, 1])
                if iw <= 0 or ih <= 0:
                    continue
                inter = iw * ih
                ai = (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])
                aj = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
                if strategy == STRATEGY_IOU:
                    score = inter / (ai + aj - inter)
                else:
                    score = max(inter / ai if ai > 0 else 0.0, inter / aj if aj > 0 else 0.0)
                if score >= th:
                    expected.append((i, j))
        assert kernels._match_pairs_numpy(b, strategy, th).tolist() == [list(p) for p in expected]

    @needs_numba
    @pytest.mark.parametrize("strategy", [STRATEGY_IOU, STRATEGY_ONE_WAY])
    def test_jit_equals_numpy(self, strategy):
        rng = np.random.default_rng(1)
        for n in (0, 1, 2, 17, 300):
            b = random_boxes(rng, n)
            for th in (0.01, 0.25, 0.8, 1.0):
                a = kernels._match_pairs_jit(b, strategy, th)
                c = kernels._match_pairs_numpy(b, strategy, th)
                assert a.dtype == c.dtype == np.int64
                assert a.shape == c.shape and np.array_equal(a, c)

    def test_pair_hits_consistent(self):
        rng = np.random.default_rng(2)
        b = random_boxes(rng, 60)
        ii, jj = np.triu_indices(60, 1)
        for strategy in (STRATEGY_IOU, STRATEGY_ONE_WAY):
            hit = kernels.pair_hits(b, ii, jj, strategy, 0.25)
            full = match_pairs_array(b, strategy, 0.25)
            assert np.array_equal(np.stack([ii[hit], jj[hit]], axis=1), full.reshape(-1, 2))

    def test_empty_shape(self):
        assert match_pairs_array(np.empty((0, 4)), STRATEGY_IOU, 0.5).shape == (0, 2)


class TestResize:
    def test_against_reference(self):
        rng = np.random.default_rng(3)
        for (h, w), (oh, ow) in [((7, 5), (3, 4)), ((40, 40), (24, 24)), ((9, 13), (20, 11)), ((1, 1), (2, 3))]:
            img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
            ref = resize_reference(img, oh, ow)
            got = kernels._resize_numpy(img, oh, ow)
            # the reference sums the four weights in another order, so exact .5 ties may round apart
            assert np.abs(got.astype(int) - ref.astype(int)).max() <= 1
            assert np.mean(got != ref) < 0.02

    def test_identity_and_constant(self):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, (30, 20, 3), dtype=np.uint8)
        assert np.array_equal(resize_bilinear(img, 30, 20), img)
        flat = np.full((50, 50, 3), 77, dtype=np.uint8)
        assert (resize_bilinear(flat, 19, 23) == 77).all()

    @needs_numba
    def test_jit_equals_numpy(self):
        rng = np.random.default_rng(5)
        for h, w, oh, ow in [(384, 384, 192, 192), (100, 37, 64, 64), (5, 5, 50, 3)]:
            img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
            assert np.array_equal(kernels._resize_jit(img, oh, ow), kernels._resize_numpy(img, oh, ow))

    def test_validation(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((4, 4), dtype=np.uint8), 2, 2)
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((4, 4, 3), dtype=np.uint8), 0, 2)


def test_env_flag_disables_numba():
    env = dict(os.environ, ADATILE_DISABLE_NUMBA="1")
    code = "from adatile._accel import HAVE_NUMBA; print(HAVE_NUMBA)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
