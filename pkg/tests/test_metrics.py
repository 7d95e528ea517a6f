import csv
import io
import math

import numpy as np
import pytest

from mvmmreg.geometry import Grid, LabelVolume
from mvmmreg.metrics import (
    MissingClassError,
    dice,
    evaluate,
    hausdorff,
    mean_foreground_dice,
    report_csv,
    surface_points,
)


def lv(arr, n_classes=None, spacing=None):
    arr = np.asarray(arr)
    return LabelVolume(Grid(arr.shape, spacing), arr, n_classes)


class TestDice:
    def test_self(self):
        a = lv([[0, 1, 1], [2, 2, 0]], 3)
        assert dice(a, a, 1) == 1.0 and dice(a, a, 2) == 1.0

    def test_disjoint(self):
        assert dice(lv([[1, 1, 0, 0]], 2), lv([[0, 0, 1, 1]], 2), 1) == 0.0

    def test_half_overlap_oracle(self):
        a = np.zeros((4, 4), int)
        b = np.zeros((4, 4), int)
        a[0, :] = 1
        b[0, :2] = 1
        b[1, :2] = 1
        assert dice(lv(a, 2), lv(b, 2), 1) == pytest.approx(0.5)

    def test_empty_conventions(self):
        a, b = lv([[0, 0]], 3), lv([[0, 2]], 3)
        assert dice(a, a, 1) == 1.0
        assert dice(a, b, 2) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = lv(rng.integers(0, 3, (6, 6)), 3), lv(rng.integers(0, 3, (6, 6)), 3)
        assert dice(a, b, 1) == dice(b, a, 1)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            dice(lv(np.zeros((3, 3), int), 2), lv(np.zeros((3, 4), int), 2), 1)

    def test_mean_foreground_skips_background(self):
        a = lv([[0, 1, 2, 2]], 3)
        b = lv([[1, 1, 2, 0]], 3)
        assert mean_foreground_dice(a, b) == pytest.approx(np.mean([2 / 3, 2 / 3]))


class TestHausdorff:
    def test_identical(self):
        a = np.zeros((8, 8), int)
        a[2:6, 3:7] = 1
        assert hausdorff(lv(a, 2), lv(a, 2), 1) == 0.0

    def test_hand_distance_with_spacing(self):
        a = np.zeros((10, 1), int)
        b = np.zeros((10, 1), int)
        a[2, 0] = 1
        b[5, 0] = 1
        assert hausdorff(lv(a, 2, (2.0, 2.0)), lv(b, 2, (2.0, 2.0)), 1) == pytest.approx(6.0)

    def test_symmetric_and_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = (rng.random((9, 9)) > 0.6).astype(int)
            b = (rng.random((9, 9)) > 0.6).astype(int)
            h = hausdorff(lv(a, 2), lv(b, 2), 1)
            assert h >= 0 and h == hausdorff(lv(b, 2), lv(a, 2), 1)

    def test_percentile_bounded_by_max(self):
        a = np.zeros((12, 12), int)
        b = np.zeros((12, 12), int)
        a[2:6, 2:6] = 1
        b[3:10, 2:7] = 1
        assert hausdorff(lv(a, 2), lv(b, 2), 1, 95) <= hausdorff(lv(a, 2), lv(b, 2), 1)

    def test_missing_class(self):
        with pytest.raises(MissingClassError):
            hausdorff(lv([[0, 1]], 3), lv([[0, 2]], 3), 1)

    def test_bad_percentile(self):
        a = lv([[0, 1]], 2)
        with pytest.raises(ValueError):
            hausdorff(a, a, 1, 0)

    def test_surface_of_block(self):
        m = np.zeros((5, 5), bool)
        m[1:4, 1:4] = True
        pts = surface_points(m, (1.0, 1.0))
        assert len(pts) == 8 and [2, 2] not in pts.tolist()

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(5)
        a, b = rng.integers(0, 3, (8, 8)), rng.integers(0, 3, (8, 8))
        perm = np.array([0, 2, 1])
        ra, rb = evaluate(lv(a, 3), lv(b, 3)), evaluate(lv(perm[a], 3), lv(perm[b], 3))
        for k in (1, 2):
            assert ra.dice[k] == rb.dice[perm[k]]
            assert ra.hausdorff[k] == rb.hausdorff[perm[k]]


class TestReport:
    def test_evaluate_self(self):
        a = np.zeros((10, 10), int)
        a[2:8, 2:8] = 1
        a[4:6, 4:6] = 2
        rep = evaluate(lv(a, 3), lv(a, 3))
        assert rep.dice == {1: 1.0, 2: 1.0}
        assert rep.hausdorff == {1: 0.0, 2: 0.0}
        assert rep.mean_dice == 1.0 and rep.foreground_hausdorff == 0.0

    def test_missing_class_reported_as_nan(self):
        a = lv([[0, 1, 1, 0]], 3)
        b = lv([[0, 1, 2, 0]], 3)
        rep = evaluate(a, b)
        assert math.isnan(rep.hausdorff[2])
        assert rep.dice[2] == 0.0

    def test_csv_layout(self):
        a = np.zeros((6, 6), int)
        a[1:4, 1:4] = 1
        b = np.roll(a, 1, axis=0)
        text = report_csv({"c0": evaluate(lv(a, 2), lv(a, 2)), "c1": evaluate(lv(a, 2), lv(b, 2))})
        rows = list(csv.DictReader(io.StringIO(text)))
        assert rows[0].keys() == {"case", "class", "metric", "value"}
        dice_rows = [r for r in rows if r["class"] == "1" and r["metric"] == "dice"]
        values = {r["case"]: float(r["value"]) for r in dice_rows}
        assert values["c0"] == 1.0
        assert values["mean"] == pytest.approx((1.0 + values["c1"]) / 2, abs=1e-6)
        assert values["std"] == pytest.approx(abs(1.0 - values["c1"]) / 2, abs=1e-6)
        assert {r["class"] for r in rows} >= {"1", "mean_fg", "fg"}
