import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raft_stereo.autograd import ContractError, ShapeError
from raft_stereo.metrics import DEFAULT_THRESHOLDS, aggregate, compute_metrics


class TestComputeMetrics:
    def test_perfect_prediction(self, rng):
        gt = rng.uniform(0, 20, size=(5, 6))
        r = compute_metrics(gt, gt)
        assert r.epe == 0 and r.d1 == 0
        assert all(v == 0 for v in r.bad.values())
        assert r.count == 30

    def test_hand_computed(self):
        gt = np.zeros(4)
        pred = np.array([0.4, -1.5, 2.5, 5.0])
        r = compute_metrics(pred, gt)
        assert r.bad[1.0] == 75.0 and r.bad[2.0] == 50.0 and r.bad[4.0] == 25.0
        assert r.epe == pytest.approx(2.35)
        assert r.d1 == 25.0

    def test_default_thresholds_cover_middlebury_set(self):
        assert {0.5, 1.0, 2.0, 4.0} <= set(DEFAULT_THRESHOLDS)

    def test_mask_and_nonfinite_gt(self):
        gt = np.array([1.0, np.inf, 3.0, 4.0])
        pred = np.array([1.0, 0.0, 0.0, 4.0])
        mask = np.array([True, True, True, False])
        r = compute_metrics(pred, gt, mask)
        assert r.count == 2 and r.epe == pytest.approx(1.5)

    def test_empty_mask(self):
        with pytest.raises(ContractError):
            compute_metrics(np.zeros(3), np.zeros(3), np.zeros(3, bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compute_metrics(np.zeros(3), np.zeros(4))

    def test_aggregate_pools_pixels(self):
        a = compute_metrics(np.ones(1), np.zeros(1))
        b = compute_metrics(np.zeros(3), np.zeros(3))
        assert aggregate([a, b]).epe == pytest.approx(0.25)
        assert aggregate([a, b], weights=None).epe == pytest.approx(0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([0.5, 2.0, 4.0, 0.25]))
    def test_permutation_and_scale(self, seed, alpha):
        r = np.random.default_rng(seed)
        pred, gt = r.uniform(0, 10, 40), r.uniform(0, 10, 40)
        base = compute_metrics(pred, gt)
        perm = r.permutation(40)
        assert compute_metrics(pred[perm], gt[perm]).bad == base.bad
        scaled = compute_metrics(alpha * pred, alpha * gt, thresholds=[alpha * t for t in DEFAULT_THRESHOLDS])
        assert list(scaled.bad.values()) == list(base.bad.values())
        assert scaled.epe == pytest.approx(alpha * base.epe)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_bad_monotone_and_bounded(self, seed):
        r = np.random.default_rng(seed)
        rep = compute_metrics(r.normal(0, 3, 50), np.zeros(50))
        vals = [rep.bad[t] for t in sorted(rep.bad)]
        assert all(0 <= v <= 100 for v in vals)
        assert all(a >= b for a, b in zip(vals, vals[1:]))
