"""Stochastic camera measurement model and log-likelihoods.

A measured frame is Poisson(signal + background) photons plus additive
Gaussian read noise N(baseline, read_sigma^2).  For gradient-based work the
Poisson term can be replaced by its Gaussian approximation, sampled with the
reparameterization trick so the draw is a smooth function of the expected
signal for a fixed standard-normal realization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optics import Image

__all__ = ["NoiseParams", "sample_measurement", "log_likelihood"]

EXACT_POISSON = "exact-poisson"
GAUSSIAN_APPROX = "gaussian-approx"


@dataclass(frozen=True)
class NoiseParams:
    """Read-noise baseline and sigma in camera counts, plus the sampling mode.

    The reference experiments never pin these; baseline=100, read_sigma=1
    are package defaults and should be overridden per dataset.
    """

    baseline: float = 100.0
    read_sigma: float = 1.0
    mode: str = EXACT_POISSON

    def __post_init__(self):
        if self.read_sigma < 0.0:
            raise ValueError(f"read_sigma must be >= 0, got {self.read_sigma}")
        if self.mode not in (EXACT_POISSON, GAUSSIAN_APPROX):
            raise ValueError(f"unknown noise mode {self.mode!r}")


def _expected_counts(model: Image, background) -> np.ndarray:
    lam = model.pixels + np.asarray(background, dtype=float)
    if lam.shape != model.pixels.shape:
        raise ValueError(
            f"background shape {np.shape(background)} incompatible with image {model.pixels.shape}"
        )
    return lam


def sample_measurement(model: Image, background, noise: NoiseParams, seed) -> Image:
    """Draw one noisy frame from the measurement model; deterministic given seed.

    Exact mode draws Poisson(V + B) per pixel; approx mode returns
    V + B + sqrt(V + B) * eps with eps ~ N(0, 1).  Read noise is added on
    top in both modes.  Negative values from read noise are kept.
    """
    # clamp tiny FFT-roundoff negatives in model images
    lam = np.clip(_expected_counts(model, background), 0.0, None)
    rng = np.random.default_rng(seed)
    if noise.mode == EXACT_POISSON:
        counts = rng.poisson(lam).astype(float)
    else:
        eps = rng.standard_normal(lam.shape)
        counts = lam + np.sqrt(lam) * eps
    if noise.read_sigma > 0.0:
        counts = counts + rng.normal(noise.baseline, noise.read_sigma, lam.shape)
    else:
        counts = counts + noise.baseline
    return Image(counts, model.pitch_um)


def log_likelihood(measured: Image, model: Image, background, noise: NoiseParams, family: str) -> float:
    """Log-likelihood of a measured frame under the expected image.

    family='poisson': sum I*log(P) - P with P = model + background, dropping
    the data-only term; requires P > 0 everywhere.  family='mixed' is the
    Gaussian model with mean P + baseline and variance P + read_sigma^2
    (the large-count Poisson limit plus read noise), including the
    log-variance term.
    """
    if measured.pixels.shape != model.pixels.shape:
        raise ValueError("measured and model shapes differ")
    total = _expected_counts(model, background)
    data = measured.pixels
    if family == "poisson":
        if np.any(total <= 0.0):
            raise ValueError("poisson family requires model + background > 0 everywhere")
        return float(np.sum(data * np.log(total) - total))
    if family == "mixed":
        var = total + noise.read_sigma**2
        if np.any(var <= 0.0):
            raise ValueError("mixed family requires positive variance everywhere")
        resid = data - (total + noise.baseline)
        return float(-0.5 * np.sum(np.log(2.0 * np.pi * var) + resid * resid / var))
    raise ValueError(f"unknown likelihood family {family!r}")
