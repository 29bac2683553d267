import csv
import io
import json

import numpy as np
import pytest

from adatile.core import BBox, ImageDims
from adatile.dataset import ImageAnnotations
from adatile.detector import Detection, GridPrediction
from adatile.metrics import (
    CSV_COLUMNS, MatchMode, count_mae, evaluate, match_to_gt, prf1, soft_f1_loss,
)


def det(box, conf=1.0, cls=1):
    return Detection(cls, BBox(*box), conf)


def gt(*boxes, image_id="img", classes=()):
    return ImageAnnotations(image_id, ImageDims(500, 500), tuple(BBox(*b) for b in boxes), tuple(classes))


GT4 = gt((0, 0, 10, 10), (20, 0, 30, 10), (40, 0, 50, 10), (60, 0, 70, 10))


def numeric_grad(p, y, h=1e-4):
    g = np.zeros_like(p)
    flat, gflat = p.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = soft_f1_loss(p, y).loss
        flat[k] = old - h
        down = soft_f1_loss(p, y).loss
        flat[k] = old
        gflat[k] = (up - down) / (2 * h)
    return g


class TestMatchMode:
    @pytest.mark.parametrize("text,kind,th", [("centroid", "centroid_in_box", 0.0), ("iou", "iou_at", 0.5),
                                              ("iou@0.3", "iou_at", 0.3), ("IOU_AT@0.75", "iou_at", 0.75)])
    def test_parse(self, text, kind, th):
        m = MatchMode.parse(text)
        assert (m.kind, m.threshold) == (kind, th)

    @pytest.mark.parametrize("bad", ["nearest", "iou@0", "iou@1.5"])
    def test_bad(self, bad):
        with pytest.raises(ValueError):
            MatchMode.parse(bad)


class TestMatchToGt:
    @pytest.mark.parametrize("mode", [MatchMode("centroid_in_box", 0), MatchMode("iou_at", 0.5)])
    def test_exact(self, mode):
        preds = [det(b.as_list()) for b in GT4.boxes]
        m = match_to_gt(preds, GT4, mode)
        assert (m.tp, m.fp, m.fn) == (4, 0, 0)

    def test_hand_count(self):
        preds = [det((2, 2, 8, 8)), det((22, 2, 28, 8)), det((100, 100, 110, 110))]
        m = match_to_gt(preds, GT4, MatchMode("centroid_in_box", 0))
        assert (m.tp, m.fp, m.fn) == (2, 1, 2)

    def test_one_to_one(self):
        preds = [det((1, 1, 5, 5), 0.9), det((4, 4, 9, 9), 0.8)]
        m = match_to_gt(preds, gt((0, 0, 10, 10)), MatchMode("centroid_in_box", 0))
        assert (m.tp, m.fp) == (1, 1)
        assert m.pairs == [(0, 0)]

    def test_confident_first(self):
        preds = [det((0, 0, 10, 10), 0.3), det((0, 0, 10, 10), 0.9)]
        assert match_to_gt(preds, gt((0, 0, 10, 10))).pairs == [(1, 0)]

    def test_iou_threshold(self):
        preds = [det((0, 0, 10, 4))]  # iou 0.4
        assert match_to_gt(preds, gt((0, 0, 10, 10)), MatchMode("iou_at", 0.5)).tp == 0
        assert match_to_gt(preds, gt((0, 0, 10, 10)), MatchMode("iou_at", 0.4)).tp == 1

    def test_class_aware(self):
        preds = [det((0, 0, 10, 10), cls=2)]
        assert match_to_gt(preds, gt((0, 0, 10, 10), classes=(1,))).tp == 0

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        g = gt(*[(x, y, x + 20, y + 20) for x in range(0, 400, 40) for y in range(0, 400, 40)])
        preds = []
        for _ in range(150):
            x, y = rng.uniform(0, 400, 2)
            preds.append(det((x, y, x + rng.uniform(5, 25), y + rng.uniform(5, 25)), float(rng.choice([0.5, 0.9]))))
        for mode in (MatchMode("centroid_in_box", 0), MatchMode("iou_at", 0.3)):
            ref = match_to_gt(preds, g, mode)
            perm = rng.permutation(len(preds))
            m = match_to_gt([preds[k] for k in perm], g, mode)
            assert (m.tp, m.fp, m.fn) == (ref.tp, ref.fp, ref.fn)


class TestPrf1:
    def test_all_matched(self):
        assert prf1(5, 0, 0) == (1.0, 1.0, 1.0)

    def test_hand(self):
        p, r, f = prf1(2, 1, 2)
        assert p == pytest.approx(2 / 3) and r == 0.5
        assert f == pytest.approx(4 / 7, abs=1e-15)

    def test_zero_guard(self):
        assert prf1(0, 0, 3) == (0.0, 0.0, 0.0)
        assert prf1(0, 0, 0) == (0.0, 0.0, 0.0)

    def test_harmonic_identity(self):
        rng = np.random.default_rng(1)
        for tp, fp, fn in rng.integers(0, 50, size=(500, 3)):
            p, r, f = prf1(int(tp), int(fp), int(fn))
            # F1 = 2TP / (2TP + FP + FN), independent of P and R
            denom = 2 * tp + fp + fn
            assert f == pytest.approx(2 * tp / denom if denom else 0.0, abs=1e-12)


class TestCountMae:
    def test_examples(self):
        assert count_mae([(3, 3), (7, 7)]) == 0
        assert count_mae([(3, 4), (5, 5)]) == 0.5
        assert count_mae([(0, 10)]) == 10

    def test_empty(self):
        with pytest.raises(ValueError):
            count_mae([])


class TestEvaluate:
    def setup_method(self):
        self.ds = [gt((0, 0, 10, 10), (20, 0, 30, 10), image_id="a"), gt((0, 0, 10, 10), image_id="b")]
        self.preds = {"a": [det((0, 0, 10, 10)), det((100, 100, 120, 120))]}

    def test_report(self):
        rep = evaluate(self.preds, self.ds, MatchMode("iou_at", 0.5), {"strategy": "iou"})
        assert (rep.tp, rep.fp, rep.fn) == (1, 1, 2)
        assert rep.count_mae == pytest.approx((0 + 1) / 2)
        assert rep.config == {"strategy": "iou", "match": {"kind": "iou_at", "threshold": 0.5}}

    def test_json_and_csv(self):
        rep = evaluate(self.preds, self.ds)
        doc = json.loads(rep.to_json())
        assert doc["format"] == "adatile.report" and doc["version"] == 1
        assert doc["aggregate"]["f1"] == pytest.approx(prf1(1, 1, 2)[2])
        rows = list(csv.reader(io.StringIO(rep.to_csv())))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert rows[1] == ["a", "1", "1", "1", "2", "2"]
        assert rows[2] == ["b", "0", "0", "1", "0", "1"]

    def test_unknown_image(self):
        with pytest.raises(ValueError):
            evaluate({"zzz": []}, self.ds)


class TestSoftF1:
    def test_hand_example(self):
        r = soft_f1_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        # tp = fp = fn = 0.5 -> 2*0.5 / (1 + 0.5 + 0.5 + eps)
        assert r.loss == pytest.approx(1 - 1 / (2 + 1e-7), abs=1e-15)
        assert r.loss == pytest.approx(0.5, abs=1e-6)

    def test_perfect_and_inverse(self):
        rng = np.random.default_rng(2)
        y = (rng.random((24, 24, 2)) < 0.1).astype(float)
        y[0, 0, :] = 1
        assert soft_f1_loss(y.copy(), y).loss <= 1e-6
        assert soft_f1_loss(1 - y, y).loss >= 1 - 1e-6

    def test_grid_prediction_input(self):
        y = np.zeros((3, 3, 1))
        y[1, 1, 0] = 1
        gp = GridPrediction(3, np.full((3, 3, 1), 0.2))
        assert soft_f1_loss(gp, y).loss == soft_f1_loss(gp.scores, y).loss

    def test_class_mean(self):
        rng = np.random.default_rng(3)
        p = rng.random((6, 6, 3))
        y = (rng.random((6, 6, 3)) < 0.3).astype(float)
        per = [soft_f1_loss(p[..., c], y[..., c]).loss for c in range(3)]
        assert soft_f1_loss(p, y).loss == pytest.approx(np.mean(per), abs=1e-14)

    @pytest.mark.parametrize("p,y", [
        (np.array([1.2, 0.0]), np.array([1.0, 0.0])),
        (np.array([-0.1, 0.0]), np.array([1.0, 0.0])),
        (np.array([0.5, 0.5]), np.array([1.0, 0.5])),
        (np.array([0.5, 0.5]), np.array([1.0, 0.0, 0.0])),
    ])
    def test_errors(self, p, y):
        with pytest.raises(ValueError):
            soft_f1_loss(p, y)

    def test_gradient_check(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(100):
            n, c = int(rng.integers(2, 7)), int(rng.integers(1, 4))
            p = rng.uniform(0.01, 0.99, (n, n, c))
            y = (rng.random((n, n, c)) < 0.3).astype(float)
            a = soft_f1_loss(p, y).gradient
            num = numeric_grad(p.copy(), y)
            assert a.shape == p.shape and np.all(np.isfinite(a))
            rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-12)
            worst = max(worst, float(rel.max()))
        assert worst <= 1e-5

    def test_loss_range_and_monotone(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p = rng.uniform(0, 1, (5, 5, 1))
            y = (rng.random((5, 5, 1)) < 0.3).astype(float)
            y[2, 2, 0] = 1.0
            base = soft_f1_loss(p, y).loss
            assert 0.0 <= base <= 1.0
            pos = np.argwhere(y[..., 0] == 1)
            r, c = pos[rng.integers(len(pos))]
            if p[r, c, 0] < 1.0:
                q = p.copy()
                q[r, c, 0] = min(1.0, q[r, c, 0] + 0.05)
                assert soft_f1_loss(q, y).loss < base

    def test_fp_mass_raises_loss(self):
        # fixed total mass 1.0 split between the object cell and a background cell
        y = np.zeros((4, 4, 1))
        y[1, 1, 0] = 1.0
        losses = []
        for fp in np.linspace(0.0, 0.5, 11):
            p = np.zeros_like(y)
            p[1, 1, 0], p[3, 3, 0] = 1.0 - fp, fp
            losses.append(soft_f1_loss(p, y).loss)
        assert all(a < b for a, b in zip(losses, losses[1:]))
