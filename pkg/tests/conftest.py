"""Shared fixtures; the expensive design runs are session-scoped."""

import numpy as np
import pytest

from psfforge.crlb import CrlbEvalSpec, optimize_pair, seeded_initial_pair
from psfforge.edof import design_edof
from psfforge.optics import OpticalConfig, PhaseMask, make_pupil_grid


@pytest.fixture(scope="session")
def cfg():
    return OpticalConfig()


@pytest.fixture(scope="session")
def desk_grid(cfg):
    """64 px pupil, 2x oversampled image plane (55 nm bins)."""
    return make_pupil_grid(cfg, n=64, fft_pad=2)


@pytest.fixture(scope="session")
def cam_grid(cfg):
    """64 px pupil at camera sampling (110 nm bins)."""
    return make_pupil_grid(cfg, n=64, fft_pad=1)


@pytest.fixture(scope="session")
def edof_design(cfg):
    """The committed 4 um EDOF design run (see the acceptance suite)."""
    mask, trace = design_edof(
        cfg, 4.0, n=64, fft_pad=2, iterations=400, lr=0.02, slices_per_step=None, seed=1
    )
    return {"mask": mask, "trace": trace}


CRLB_PAIR_SEED = 7
CRLB_PAIR_RANGE_UM = 2.0


@pytest.fixture(scope="session")
def crlb_pair(cfg, desk_grid):
    """The committed 2 um CRLB pair optimization run (see the acceptance suite)."""
    spec = CrlbEvalSpec.over_range(CRLB_PAIR_RANGE_UM)
    init1, init2 = seeded_initial_pair(cfg, desk_grid, seed=CRLB_PAIR_SEED)
    mask1, mask2, trace = optimize_pair(cfg, init1, init2, spec, iterations=200, lr=5e-3)
    return {
        "mask1": mask1,
        "mask2": mask2,
        "trace": trace,
        "spec": spec,
        "init": (init1, init2),
    }


@pytest.fixture(scope="session")
def camera_pair(cfg, cam_grid, crlb_pair):
    """The designed pair re-hosted on the camera-pitch grid for pipeline work."""
    return (
        PhaseMask(crlb_pair["mask1"].values, cam_grid),
        PhaseMask(crlb_pair["mask2"].values, cam_grid),
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
