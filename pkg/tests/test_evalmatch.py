import itertools

import numpy as np
import pytest

from psfforge.errors import UndefinedMetricError
from psfforge.evalmatch import (
    VoxelGrid,
    heatmap_loss,
    jaccard,
    match_hungarian,
    overlap_loss,
    rmse,
    voxelize,
)


def brute_force_cost(pred, gt, threshold):
    """Exhaustive minimum of sum(matched d) + threshold * (n_fp + n_fn)."""
    n_p, n_g = len(pred), len(gt)
    diff = pred[:, None, :] - gt[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    best = threshold * (n_p + n_g)  # empty matching
    for k in range(1, min(n_p, n_g) + 1):
        for rows in itertools.combinations(range(n_p), k):
            for cols in itertools.permutations(range(n_g), k):
                ds = [dist[i, j] for i, j in zip(rows, cols)]
                if any(d > threshold for d in ds):
                    continue
                cost = sum(ds) + threshold * (n_p + n_g - 2 * k)
                best = min(best, cost)
    return best


def result_cost(m):
    return sum(d for _, _, d in m.pairs) + m.threshold_um * (m.n_fp + m.n_fn)


class TestHungarian:
    def test_identical_sets(self, rng):
        pts = rng.random((8, 3))
        m = match_hungarian(pts, pts, 0.1)
        assert m.n_tp == 8 and m.n_fp == 0 and m.n_fn == 0
        assert sum(d for _, _, d in m.pairs) == 0.0

    def test_empty_prediction(self):
        gt = np.zeros((5, 3))
        m = match_hungarian(np.empty((0, 3)), gt, 0.1)
        assert (m.n_tp, m.n_fp, m.n_fn) == (0, 0, 5)
        assert jaccard(m) == 0.0

    def test_swap_beats_greedy(self):
        # greedy nearest-neighbor matches p0-g0 and strands p1; the optimal
        # assignment pairs p0-g1 and p1-g0, both within threshold
        gt = np.array([[0.0, 0.0, 0.0], [0.08, 0.0, 0.0]])
        pred = np.array([[0.04, 0.0, 0.0], [-0.09, 0.0, 0.0]])
        m = match_hungarian(pred, gt, 0.1)
        assert m.n_tp == 2

    def test_matches_exhaustive_on_small_instances(self, rng):
        for _ in range(60):
            n_p, n_g = rng.integers(0, 5, size=2)
            pred = rng.random((n_p, 3)) * 0.3
            gt = rng.random((n_g, 3)) * 0.3
            m = match_hungarian(pred, gt, 0.1)
            assert result_cost(m) == pytest.approx(brute_force_cost(pred, gt, 0.1), abs=1e-12)

    def test_distance_gate(self):
        m = match_hungarian(np.array([[0.0, 0.0, 0.0]]), np.array([[0.2, 0.0, 0.0]]), 0.1)
        assert m.n_tp == 0 and m.n_fp == 1 and m.n_fn == 1

    def test_translation_invariance(self, rng):
        pred = rng.random((6, 3))
        gt = pred + rng.normal(0, 0.02, (6, 3))
        shift = np.array([3.0, -2.0, 1.0])
        m0 = match_hungarian(pred, gt, 0.1)
        m1 = match_hungarian(pred + shift, gt + shift, 0.1)
        assert jaccard(m0) == jaccard(m1)

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            match_hungarian(np.zeros((1, 3)), np.zeros((1, 3)), 0.0)


class TestMetrics:
    def test_jaccard_values(self):
        m = match_hungarian(np.zeros((10, 3)), np.zeros((10, 3)), 0.1)
        assert jaccard(m) == 1.0
        m = match_hungarian(np.empty((0, 3)), np.empty((0, 3)), 0.1)
        assert jaccard(m) == 1.0

    def test_jaccard_half(self):
        gt = np.array([[float(i), 0.0, 0.0] for i in range(5)])
        pred = np.vstack([gt, gt + np.array([0.0, 0.0, 50.0])])
        m = match_hungarian(pred, gt, 0.1)
        assert (m.n_tp, m.n_fp, m.n_fn) == (5, 5, 0)
        assert jaccard(m) == 0.5

    def test_rmse_three_four_five(self):
        pred = np.array([[0.03, 0.04, 0.05]])
        gt = np.zeros((1, 3))
        m = match_hungarian(pred, gt, 0.1)
        lat, ax = rmse(m)
        assert lat == pytest.approx(0.05)
        assert ax == pytest.approx(0.05)

    def test_rmse_recompute(self, rng):
        gt = rng.random((20, 3))
        pred = gt + rng.normal(0, 0.01, (20, 3))
        m = match_hungarian(pred, gt, 0.2)
        lat, ax = rmse(m)
        d = pred - gt
        assert lat == pytest.approx(np.sqrt(np.mean(d[:, 0] ** 2 + d[:, 1] ** 2)))
        assert ax == pytest.approx(np.sqrt(np.mean(d[:, 2] ** 2)))

    def test_rmse_undefined_without_matches(self):
        m = match_hungarian(np.empty((0, 3)), np.zeros((2, 3)), 0.1)
        with pytest.raises(UndefinedMetricError):
            rmse(m)


GRID = VoxelGrid(shape=(8, 10, 10), voxel_xy_um=0.1, voxel_z_um=0.1)


class TestVoxelize:
    def test_voxel_center_roundtrip(self):
        centers = np.array([[0.35, 0.25, 0.15], [0.95, 0.85, 0.75]])
        res = voxelize(centers, GRID, w=800.0)
        assert res.n_dropped == 0 and res.n_collisions == 0
        occupied = np.argwhere(res.volume > 0)
        np.testing.assert_array_equal(occupied, [[1, 2, 3], [7, 8, 9]])
        assert np.all(res.volume[res.volume > 0] == 800.0)

    def test_single_emitter_single_voxel(self):
        res = voxelize(np.array([[0.51, 0.52, 0.33]]), GRID)
        assert (res.volume > 0).sum() == 1

    def test_collision_flagged(self):
        res = voxelize(np.array([[0.51, 0.52, 0.33], [0.52, 0.53, 0.34]]), GRID)
        assert res.n_collisions == 1
        assert (res.volume > 0).sum() == 1

    def test_out_of_bounds_dropped(self):
        res = voxelize(np.array([[5.0, 0.0, 0.0]]), GRID)
        assert res.n_dropped == 1


class TestVolumeLosses:
    def test_heatmap_zero_on_equal(self, rng):
        v = rng.random((6, 8, 8))
        assert heatmap_loss(v, v.copy()) == 0.0

    def test_heatmap_symmetric(self, rng):
        a, b = rng.random((5, 7, 7)), rng.random((5, 7, 7))
        assert heatmap_loss(a, b) == pytest.approx(heatmap_loss(b, a), rel=1e-12)

    def test_heatmap_decreases_toward_alignment(self):
        losses = []
        for k in (3, 2, 1, 0):
            a = np.zeros((5, 17, 17))
            b = np.zeros((5, 17, 17))
            a[2, 8, 8] = 800.0
            b[2, 8, 8 + k] = 800.0
            losses.append(heatmap_loss(a, b))
        assert losses[0] > losses[1] > losses[2] > losses[3] == 0.0

    def test_heatmap_shape_mismatch(self):
        with pytest.raises(ValueError):
            heatmap_loss(np.zeros((2, 2, 2)), np.zeros((3, 2, 2)))

    def test_overlap_boolean_identity_is_zero(self):
        v = np.zeros((4, 4, 4))
        v[1, 2, 3] = 1.0
        v[0, 0, 0] = 1.0
        assert overlap_loss(v, v) == pytest.approx(0.0)

    def test_overlap_empty_prediction_is_one(self):
        gt = np.zeros((4, 4, 4))
        gt[2, 2, 2] = 1.0
        assert overlap_loss(np.zeros_like(gt), gt) == pytest.approx(1.0)

    def test_overlap_literal_formula(self, rng):
        pred = 800.0 * (rng.random((5, 6, 6)) > 0.7)
        gt = 800.0 * (rng.random((5, 6, 6)) > 0.7)
        joint = float((pred * gt).sum())
        expected = 1.0 - 2.0 * joint / (joint + gt.sum())
        assert overlap_loss(pred, gt) == pytest.approx(expected, rel=1e-12)

    def test_overlap_undefined_for_empty_gt(self):
        with pytest.raises(UndefinedMetricError):
            overlap_loss(np.ones((2, 2, 2)), np.zeros((2, 2, 2)))
