import numpy as np
import pytest

import psfforge.edof as edof_mod
from psfforge.optics import Emitter, OpticalConfig, PhaseMask, compute_psf, make_pupil_grid
from psfforge.edof import (
    build_edof_target,
    design_edof,
    edof_loss,
    edof_loss_gradient,
    select_slices,
)
from psfforge.adam import AdamState


@pytest.fixture(scope="module")
def target(cfg, desk_grid):
    return build_edof_target(cfg, grid=desk_grid, window_px=121, delta_z_um=4.0)


class TestTarget:
    def test_fit_centered(self, target):
        assert abs(target.fit_center_px[0]) < 0.1
        assert abs(target.fit_center_px[1]) < 0.1

    def test_fit_residual_small(self, target):
        assert target.fit_residual < 0.05

    def test_sigma_grows_with_diffraction_scale(self, desk_grid):
        sigmas = []
        for wl in (0.5, 0.605, 0.7):
            cfg = OpticalConfig(wavelength_um=wl)
            grid = make_pupil_grid(cfg, n=64, fft_pad=2)
            t = build_edof_target(cfg, grid=grid, window_px=121, delta_z_um=2.0)
            sigmas.append(t.fit_sigma_um)
        assert sigmas[0] < sigmas[1] < sigmas[2]

    def test_weight_values(self, target):
        w = target.window_px
        c = w // 2
        assert target.weight[c, c] == 1.0
        # inside the diffraction-limit radius the weight is exactly 1
        r = np.hypot(*np.meshgrid(*(2 * [(np.arange(w) - c) * target.pitch_um])))
        assert np.all(target.weight[r <= target.d_um] == 1.0)
        # outside it grows linearly with slope alpha (25 per um: r=0.2 -> 5)
        outside = r > target.d_um
        np.testing.assert_allclose(target.weight[outside], 25.0 * r[outside], rtol=1e-12)
        probe = np.unravel_index(np.argmin(np.abs(r - 0.2)), r.shape)
        assert target.weight[probe] == pytest.approx(5.0, rel=0.15)

    def test_knot_layout(self, target):
        assert len(target.z_knots) == 21
        assert target.z_knots[1] - target.z_knots[0] == pytest.approx(0.2)


class TestLoss:
    def test_additive_over_disjoint_subsets(self, cfg, desk_grid, target, rng):
        mask = PhaseMask(rng.normal(0, 0.4, (64, 64)), desk_grid)
        za, zb = [0.0, 1.0], [2.0, 3.0]
        total = edof_loss(cfg, mask, target, za + zb)
        assert total == pytest.approx(
            edof_loss(cfg, mask, target, za) + edof_loss(cfg, mask, target, zb), rel=1e-12
        )

    def test_nonnegative_and_worse_when_defocused(self, cfg, desk_grid, target):
        zero = PhaseMask.zero(desk_grid)
        at_focus = edof_loss(cfg, zero, target, [0.0])
        deep = edof_loss(cfg, zero, target, [2.0])
        assert 0.0 <= at_focus < deep

    def test_gradient_zero_outside_aperture(self, cfg, desk_grid, target, rng):
        mask = PhaseMask(rng.normal(0, 0.4, (64, 64)), desk_grid)
        g = edof_loss_gradient(cfg, mask, target, [0.4, 1.7])
        assert np.all(g[desk_grid.aperture == 0.0] == 0.0)

    def test_gradient_linear_in_slices(self, cfg, desk_grid, target, rng):
        mask = PhaseMask(rng.normal(0, 0.4, (64, 64)), desk_grid)
        g1 = edof_loss_gradient(cfg, mask, target, [0.6])
        g2 = edof_loss_gradient(cfg, mask, target, [2.4])
        g12 = edof_loss_gradient(cfg, mask, target, [0.6, 2.4])
        np.testing.assert_allclose(g12, g1 + g2, rtol=1e-10, atol=1e-18)

    def test_gradient_matches_finite_differences(self, cfg, desk_grid, target, rng):
        mask = PhaseMask(rng.normal(0, 0.3, (64, 64)), desk_grid)
        zs = [0.3, 1.1, 2.9]
        grad = edof_loss_gradient(cfg, mask, target, zs)
        pixels = np.argwhere(desk_grid.aperture > 0)
        h = 1e-5
        for i, j in pixels[rng.choice(len(pixels), 8, replace=False)]:
            up, dn = mask.values.copy(), mask.values.copy()
            up[i, j] += h
            dn[i, j] -= h
            fd = (
                edof_loss(cfg, PhaseMask(up, desk_grid), target, zs)
                - edof_loss(cfg, PhaseMask(dn, desk_grid), target, zs)
            ) / (2 * h)
            assert abs(fd - grad[i, j]) <= 1e-4 * abs(fd) + 1e-6


class TestSliceSelection:
    def test_lowest_three_before_perturbation(self, cfg, desk_grid, target, monkeypatch):
        knots = np.array([0.0, 0.2, 0.4, 0.6, 0.8])
        monkeypatch.setattr(
            edof_mod, "correlation_scan", lambda *a, **k: np.array([0.9, 0.1, 0.8, 0.2, 0.3])
        )
        picks = select_slices(cfg, PhaseMask.zero(desk_grid), target, knots, seed=0, jitter_um=0.0)
        np.testing.assert_allclose(picks, [0.2, 0.6, 0.8])

    def test_ties_break_by_ascending_z(self, cfg, desk_grid, target, monkeypatch):
        knots = np.array([0.0, 0.2, 0.4, 0.6, 0.8])
        monkeypatch.setattr(edof_mod, "correlation_scan", lambda *a, **k: np.ones(5))
        picks = select_slices(cfg, PhaseMask.zero(desk_grid), target, knots, seed=0, jitter_um=0.0)
        np.testing.assert_allclose(picks, [0.0, 0.2, 0.4])

    def test_perturbations_stay_in_range(self, cfg, desk_grid, target, monkeypatch):
        knots = np.array([0.0, 0.2, 0.4])
        monkeypatch.setattr(edof_mod, "correlation_scan", lambda *a, **k: np.array([0.1, 0.5, 0.1]))
        for seed in range(10_000):
            picks = select_slices(cfg, PhaseMask.zero(desk_grid), target, knots, seed=seed)
            assert np.all(picks >= 0.0) and np.all(picks <= 0.4)

    def test_needs_three_knots(self, cfg, desk_grid, target):
        with pytest.raises(ValueError):
            select_slices(cfg, PhaseMask.zero(desk_grid), target, [0.0, 0.2], seed=0)


class TestDesign:
    def test_zero_iterations_returns_initial_mask(self, cfg):
        mask, trace = design_edof(cfg, 1.0, n=64, fft_pad=2, iterations=0)
        assert np.all(mask.values == 0.0)
        assert len(trace) == 1

    def test_deterministic(self, cfg):
        a, ta = design_edof(cfg, 1.0, n=64, fft_pad=2, iterations=6, checkpoint_every=3, seed=4)
        b, tb = design_edof(cfg, 1.0, n=64, fft_pad=2, iterations=6, checkpoint_every=3, seed=4)
        np.testing.assert_array_equal(a.values, b.values)
        assert ta == tb

    def test_final_loss_not_above_initial(self, cfg):
        _, trace = design_edof(cfg, 2.0, n=64, fft_pad=2, iterations=40, checkpoint_every=10, seed=2)
        losses = [l for _, l in trace]
        assert min(losses) <= losses[0]

    def test_invalid_range(self, cfg):
        with pytest.raises(ValueError):
            design_edof(cfg, 0.0, n=64)


class TestAdam:
    def test_reference_update(self):
        adam = AdamState(step_size=0.1)
        p = np.array([1.0, -2.0])
        g = np.array([0.5, -1.0])
        p1 = adam.step(p, g)
        # first step: m_hat = g, v_hat = g^2 -> step = lr * sign(g) (up to eps)
        np.testing.assert_allclose(p1, p - 0.1 * np.sign(g), atol=1e-6)
        assert adam.iteration == 1

    def test_moments_shapes(self):
        adam = AdamState()
        p = np.zeros((4, 4))
        adam.step(p, np.ones((4, 4)))
        assert adam.first_moment.shape == (4, 4)
        assert adam.second_moment.shape == (4, 4)
