import numpy as np
import pytest

from psfforge.tracking import Track, ensemble_msd, link_dbscan, msd


def jittering_emitter(center, n_frames, rng, scale=0.02, start=0):
    pts = np.empty((n_frames, 4))
    pts[:, 0] = np.arange(start, start + n_frames)
    pts[:, 1:] = np.asarray(center) + rng.normal(0, scale, (n_frames, 3))
    return pts


class TestLinking:
    def test_single_emitter_single_track(self, rng):
        pts = jittering_emitter([5.0, 5.0, 1.0], 100, rng)
        tracks, noise = link_dbscan(pts, eps_um=0.25, min_pts=25)
        assert len(tracks) == 1
        assert len(noise) == 0
        assert len(tracks[0].points) == 100
        assert tracks[0].n_missing == 0

    def test_two_emitters_two_tracks(self, rng):
        a = jittering_emitter([2.0, 2.0, 1.0], 80, rng)
        b = jittering_emitter([4.0, 2.0, 1.0], 80, rng)
        tracks, noise = link_dbscan(np.vstack([a, b]), eps_um=0.25, min_pts=25)
        assert len(tracks) == 2
        assert len(noise) == 0

    def test_order_independent(self, rng):
        a = jittering_emitter([2.0, 2.0, 1.0], 60, rng)
        b = jittering_emitter([5.0, 3.0, 2.0], 60, rng)
        pooled = np.vstack([a, b])
        shuffled = pooled[rng.permutation(len(pooled))]
        t1, _ = link_dbscan(pooled, eps_um=0.25, min_pts=25)
        t2, _ = link_dbscan(shuffled, eps_um=0.25, min_pts=25)
        assert len(t1) == len(t2)
        for x, y in zip(t1, t2):
            np.testing.assert_allclose(x.points, y.points)

    def test_eps_chain_property(self):
        # points chained 0.2 um apart (< eps) all land in one cluster
        xs = np.arange(0, 3.0, 0.2)
        pts = np.column_stack([np.arange(len(xs)), xs, np.zeros(len(xs)), np.zeros(len(xs))])
        tracks, noise = link_dbscan(pts, eps_um=0.25, min_pts=3)
        assert len(tracks) == 1
        assert len(noise) == 0

    def test_sparse_points_are_noise(self, rng):
        pts = np.column_stack([np.arange(10), rng.uniform(0, 50, (10, 3)).T[0], rng.uniform(0, 50, 10), rng.uniform(0, 50, 10)])
        tracks, noise = link_dbscan(pts, eps_um=0.25, min_pts=25)
        assert tracks == []
        assert len(noise) == 10

    def test_duplicate_frames_resolved_to_median(self, rng):
        pts = jittering_emitter([1.0, 1.0, 1.0], 100, rng)
        dup = pts[50].copy()
        dup[1:] += 0.2  # same frame, farther from the cluster median
        tracks, noise = link_dbscan(np.vstack([pts, dup[None, :]]), eps_um=0.25, min_pts=25)
        assert len(tracks) == 1
        assert len(tracks[0].points) == 100
        assert len(noise) == 1

    def test_crossing_guard_rejects_cluster(self, rng):
        # two emitters in one dense blob: half the frames duplicated
        a = jittering_emitter([1.0, 1.0, 1.0], 60, rng, scale=0.01)
        b = jittering_emitter([1.05, 1.0, 1.0], 60, rng, scale=0.01)
        with pytest.warns(UserWarning):
            tracks, noise = link_dbscan(np.vstack([a, b]), eps_um=0.25, min_pts=25)
        assert tracks == []
        assert len(noise) == 120

    def test_missing_frames_counted(self, rng):
        pts = jittering_emitter([1.0, 1.0, 1.0], 60, rng)
        pts = np.delete(pts, [10, 20, 30], axis=0)
        tracks, _ = link_dbscan(pts, eps_um=0.25, min_pts=25)
        assert tracks[0].n_missing == 3

    def test_track_frame_order_validated(self):
        with pytest.raises(ValueError):
            Track(0, np.array([[1, 0, 0, 0], [1, 0, 0, 0]]))


class TestMsd:
    def test_stationary(self):
        pts = np.column_stack([np.arange(50), np.ones(50), np.ones(50), np.ones(50)])
        curve = msd(Track(0, pts), 10)
        assert np.all(curve[:, 1] == 0.0)
        assert curve[0, 0] == 0 and curve[0, 1] == 0.0

    def test_ballistic(self):
        v = np.array([0.1, -0.05, 0.2])
        frames = np.arange(100)
        pts = np.column_stack([frames, *(frames[:, None] * v).T])
        curve = msd(Track(0, pts), 8)
        for lag, value in curve[1:]:
            assert value == pytest.approx(np.sum(v**2) * lag**2, rel=1e-9)

    def test_brownian_slope(self):
        rng = np.random.default_rng(3)
        d_coef = 0.01  # um^2/frame
        steps = rng.normal(0, np.sqrt(2 * d_coef), (1000, 3))
        pos = np.cumsum(steps, axis=0)
        pts = np.column_stack([np.arange(1000), pos])
        curve = msd(Track(0, pts), 10)
        slope = np.polyfit(curve[1:, 0], curve[1:, 1], 1)[0]
        assert slope == pytest.approx(6 * d_coef, rel=0.15)

    def test_missing_frames_excluded_pairwise(self):
        frames = np.array([0, 1, 3, 4])
        pts = np.column_stack([frames, frames * 0.1, np.zeros(4), np.zeros(4)])
        curve = msd(Track(0, pts), 2)
        lag1 = curve[curve[:, 0] == 1][0, 1]
        assert lag1 == pytest.approx(0.01)  # pairs (0,1) and (3,4) only

    def test_short_track_rejected(self):
        with pytest.raises(ValueError):
            msd(Track(0, np.array([[0, 0, 0, 0]])), 5)


class TestEnsemble:
    def test_single_track_equals_msd(self, rng):
        pts = jittering_emitter([0, 0, 0], 80, rng)
        t = Track(0, pts)
        np.testing.assert_allclose(ensemble_msd([t], 6), msd(t, 6))

    def test_identical_tracks_unchanged(self, rng):
        pts = jittering_emitter([0, 0, 0], 80, rng)
        t1, t2 = Track(0, pts), Track(1, pts.copy())
        np.testing.assert_allclose(ensemble_msd([t1, t2], 6), msd(t1, 6))

    def test_mixture_between_components(self):
        rng = np.random.default_rng(11)
        tracks = []
        for tid, d_coef in enumerate((0.002, 0.02)):
            steps = rng.normal(0, np.sqrt(2 * d_coef), (800, 3))
            pts = np.column_stack([np.arange(800), np.cumsum(steps, axis=0)])
            tracks.append(Track(tid, pts))
        lo = msd(tracks[0], 5)[1:, 1]
        hi = msd(tracks[1], 5)[1:, 1]
        mix = ensemble_msd(tracks, 5)[1:, 1]
        assert np.all(mix >= np.minimum(lo, hi) - 1e-12)
        assert np.all(mix <= np.maximum(lo, hi) + 1e-12)

    def test_requires_tracks(self):
        with pytest.raises(ValueError):
            ensemble_msd([], 5)
