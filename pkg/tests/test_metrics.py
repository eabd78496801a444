import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dadf.backbone import ShapeMismatchError
from dadf.metrics import (
    MetricsReport,
    UndefinedMetricError,
    accuracy,
    auc,
    detection_metrics,
    eer,
    iinc,
    pbca,
)


def pairwise_auc(scores, labels):
    """O(n^2) Mann-Whitney statistic with half credit for ties."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return 100.0 * total / (len(pos) * len(neg))


def loop_pbca(pred, gt, thr=0.5):
    hits = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            hits += int((pred[i, j] >= thr) == bool(gt[i, j]))
    return 100.0 * hits / pred.size


def loop_acc(scores, labels):
    hits = 0
    for s, y in zip(scores, labels):
        hits += int((1 / (1 + math.exp(-s)) >= 0.5) == bool(y))
    return 100.0 * hits / len(scores)


class TestPBCA:
    def test_perfect_and_inverted(self, rng):
        gt = rng.integers(0, 2, size=(8, 8))
        assert pbca(gt.astype(float), gt) == 100.0
        assert pbca(1.0 - gt, gt) == 0.0

    def test_matches_loop_oracle(self, rng):
        for _ in range(20):
            pred, gt = rng.random((4, 4)), rng.integers(0, 2, (4, 4))
            assert pbca(pred, gt) == loop_pbca(pred, gt)

    def test_complement(self, rng):
        pred = rng.random((16, 16))
        pred[np.isclose(pred, 0.5)] = 0.25
        gt = rng.integers(0, 2, (16, 16))
        assert pbca(pred, gt) + pbca(1 - pred, gt) == pytest.approx(100.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            pbca(np.zeros((2, 2)), np.zeros((2, 3)))


class TestIINC:
    def test_pinned_values(self):
        a = np.array([[1, 1, 0, 0]])
        assert iinc(a, a) == 0.0
        assert iinc(a, np.array([[0, 0, 1, 1]])) == 1.0
        assert iinc(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
        assert iinc(a, np.zeros_like(a)) == 1.0
        assert iinc(np.array([[1, 1, 0]]), np.array([[0, 1, 1]])) == 0.5

    @given(st.integers(0, 100_000))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_permutation_and_range(self, seed):
        r = np.random.default_rng(seed)
        p, g = r.integers(0, 2, (5, 5)), r.integers(0, 2, (5, 5))
        v = iinc(p, g)
        assert 0.0 <= v <= 1.0
        assert v == iinc(g, p)
        perm = r.permutation(25)
        assert v == iinc(p.ravel()[perm], g.ravel()[perm])


class TestDetection:
    def test_perfect_separation(self):
        s, y = [-3, -2, -1, 1, 2, 3], [0, 0, 0, 1, 1, 1]
        acc, a, e = detection_metrics(s, y)
        assert (acc, a, e) == (100.0, 100.0, 0.0)

    def test_inverted(self):
        assert auc([3, 2, -1, -2], [0, 0, 1, 1]) == 0.0

    def test_auc_matches_pairwise_oracle(self, rng):
        for _ in range(20):
            s = np.round(rng.normal(size=20), 1)  # rounding forces ties
            y = rng.integers(0, 2, 20)
            if y.all() or not y.any():
                continue
            assert abs(auc(s, y) - pairwise_auc(s, y)) < 1e-9

    def test_acc_matches_loop_oracle(self, rng):
        for _ in range(20):
            s, y = rng.normal(size=30), rng.integers(0, 2, 30)
            assert accuracy(s, y) == loop_acc(s, y)

    def test_auc_monotone_invariant(self, rng):
        s, y = rng.normal(size=50), rng.integers(0, 2, 50)
        assert auc(s, y) == pytest.approx(auc(np.exp(3 * s) + 7, y), abs=1e-12)

    def test_eer_random_scores(self):
        r = np.random.default_rng(0)
        s, y = r.normal(size=20_000), r.integers(0, 2, 20_000)
        assert abs(eer(s, y) - 50.0) < 3.0

    def test_eer_interpolation(self):
        # ROC vertices (0,0) (0,.5) (.5,.5) (.5,1) (1,1): FPR = FNR = 0.5 on the flat segment
        assert eer([4, 3, 2, 1], [1, 0, 1, 0]) == pytest.approx(50.0)
        # one misordered pair out of 2x2
        assert eer([4, 2, 3, 1], [1, 1, 0, 0]) == pytest.approx(50.0)

    @given(st.integers(0, 100_000))
    @settings(max_examples=30, deadline=None)
    def test_eer_in_range(self, seed):
        r = np.random.default_rng(seed)
        y = np.r_[0, 1, r.integers(0, 2, 10)]
        e = eer(r.normal(size=12), y)
        assert 0.0 <= e <= 100.0

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            detection_metrics([0.1, 0.2], [1, 1])
        assert accuracy([0.1, -0.2], [1, 1]) == 50.0


def test_report_round_trip(tmp_path):
    rep = MetricsReport(91.25, 0.0321, 88.0, 93.5, 9.75, 20.1, 100, {"clean": {"pbca": 91.25, "auc": None}})
    json_path, txt_path = rep.write(tmp_path / "report")
    assert MetricsReport.read(json_path) == rep
    keys = [line.split(" = ")[0] for line in txt_path.read_text().splitlines()]
    assert keys[:6] == ["pbca", "iinc", "acc", "auc", "eer", "trainable_fraction"]
