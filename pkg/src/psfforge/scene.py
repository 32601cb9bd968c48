"""Dense-scene synthesis: many emitters imaged into a dual-channel pair.

A scene is a set of emitters plus a smooth background model.  Rendering
produces the noiseless expected-photon images for both channels (the
incoherent sum of per-emitter PSFs, signal split between channels); the
background and camera noise are applied separately at sampling time so one
noiseless render can serve many noise draws.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .noise import NoiseParams, sample_measurement
from .optics import Emitter, Image, OpticalConfig, PhaseMask, compute_psf
from . import serialization as ser

__all__ = [
    "SuperGaussian",
    "Scene",
    "ImagePair",
    "DatasetParams",
    "super_gaussian_background",
    "render_scene",
    "sample_scene",
    "generate_dataset",
]


@dataclass(frozen=True)
class SuperGaussian:
    """Background model A1 * exp(-1/2 * ((u-mu)^T Sigma^-1 (u-mu))^p) + A2.

    u is measured in pixels; p = 1 reproduces a plain anisotropic Gaussian
    bump (the printed form), higher p flattens the top.
    """

    a1: float = 0.0
    a2: float = 0.0
    mu_px: tuple = (0.0, 0.0)
    cov: tuple = ((1.0, 0.0), (0.0, 1.0))
    p: float = 1.0

    def __post_init__(self):
        if self.a1 < 0.0 or self.a2 < 0.0:
            raise ValueError("background amplitudes must be >= 0")


@dataclass
class Scene:
    """Ground-truth emitters plus background parameters and the channel split."""

    emitters: list
    background: SuperGaussian = field(default_factory=SuperGaussian)
    split: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.split <= 1.0:
            raise ValueError(f"split must be in [0, 1], got {self.split}")


@dataclass
class ImagePair:
    """Two co-registered channel images; transform maps ch2 coords onto ch1."""

    ch1: Image
    ch2: Image
    transform: object | None = None

    def __post_init__(self):
        if self.ch1.pixels.shape != self.ch2.pixels.shape:
            raise ValueError("channel images must share a shape")
        if self.ch1.pitch_um != self.ch2.pitch_um:
            raise ValueError("channel images must share a pixel pitch")


def super_gaussian_background(params: SuperGaussian, shape) -> np.ndarray:
    """Evaluate the background model per pixel; pixel u = (x=col, y=row)."""
    cov = np.asarray(params.cov, dtype=float)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
        raise ValueError("cov must be a symmetric 2x2 matrix")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("cov must be positive definite") from None
    inv = np.linalg.inv(cov)
    rows, cols = np.indices(shape)
    du = np.stack([cols - params.mu_px[0], rows - params.mu_px[1]], axis=-1)
    q = np.einsum("...i,ij,...j->...", du, inv, du)
    return params.a1 * np.exp(-0.5 * np.power(q, params.p)) + params.a2


def _paste(canvas: np.ndarray, tile: np.ndarray, r0: int, c0: int) -> bool:
    """Add `tile` centered at (r0, c0); returns False if fully outside."""
    h = tile.shape[0] // 2
    r_lo, r_hi = r0 - h, r0 + h + 1
    c_lo, c_hi = c0 - h, c0 + h + 1
    rr = slice(max(r_lo, 0), min(r_hi, canvas.shape[0]))
    cc = slice(max(c_lo, 0), min(c_hi, canvas.shape[1]))
    if rr.start >= rr.stop or cc.start >= cc.stop:
        return False
    canvas[rr, cc] += tile[rr.start - r_lo : rr.stop - r_lo, cc.start - c_lo : cc.stop - c_lo]
    return True


def render_scene(
    config: OpticalConfig,
    mask1: PhaseMask,
    mask2: PhaseMask,
    scene: Scene,
    window_px: int,
    support_px: int | None = None,
) -> ImagePair:
    """Noiseless dual-channel render of a scene onto a window_px canvas.

    Emitter (x, y) lives in [0, window_px * pitch] with pixel (r, c) centered
    at ((c + 0.5) * pitch, (r + 0.5) * pitch).  Each emitter is rendered once
    per channel into a `support_px` tile (sub-pixel offset via the pupil
    ramp, never by wrapping) and added in place; background is NOT included.
    """
    if mask1.grid.pitch_um != mask2.grid.pitch_um:
        raise ValueError("channel masks must share an image pitch")
    pitch = mask1.grid.pitch_um
    if support_px is None:
        support_px = min(window_px | 1, mask1.grid.padded_n - 1)
    canvases = [np.zeros((window_px, window_px)), np.zeros((window_px, window_px))]
    splits = (scene.split, 1.0 - scene.split)
    for em in scene.emitters:
        c0 = int(round(em.x_um / pitch - 0.5))
        r0 = int(round(em.y_um / pitch - 0.5))
        dx = em.x_um - (c0 + 0.5) * pitch
        dy = em.y_um - (r0 + 0.5) * pitch
        placed = False
        for canvas, mask, frac in zip(canvases, (mask1, mask2), splits):
            if frac == 0.0:
                placed = True
                continue
            tile = compute_psf(config, mask, Emitter(dx, dy, em.z_um, em.photons * frac), support_px)
            placed = _paste(canvas, tile.pixels, r0, c0) or placed
        if not placed:
            warnings.warn(f"emitter at ({em.x_um:.2f}, {em.y_um:.2f}) um falls outside the field of view")
    return ImagePair(Image(canvases[0], pitch), Image(canvases[1], pitch))


def sample_scene(
    density_per_um2: float,
    fov_um: float,
    z_range_um,
    photons_range,
    seed,
    background: SuperGaussian | None = None,
    split: float = 0.5,
) -> Scene:
    """Draw a random scene: Poisson count, uniform positions and photon counts."""
    if density_per_um2 < 0.0:
        raise ValueError("density must be >= 0")
    z_lo, z_hi = z_range_um
    p_lo, p_hi = photons_range
    if z_lo > z_hi or p_lo > p_hi:
        raise ValueError("ranges must satisfy lo <= hi")
    rng = np.random.default_rng(seed)
    count = rng.poisson(density_per_um2 * fov_um * fov_um)
    emitters = [
        Emitter(
            x_um=rng.uniform(0.0, fov_um),
            y_um=rng.uniform(0.0, fov_um),
            z_um=rng.uniform(z_lo, z_hi),
            photons=rng.uniform(p_lo, p_hi),
        )
        for _ in range(count)
    ]
    return Scene(emitters, background or SuperGaussian(), split=split)


@dataclass(frozen=True)
class DatasetParams:
    """Knobs of one simulated dataset; everything lands in the manifest."""

    density_per_um2: float = 0.1
    fov_um: float = 12.0
    z_range_um: tuple = (0.0, 4.0)
    photons_range: tuple = (10000.0, 20000.0)
    background: SuperGaussian = field(default_factory=lambda: SuperGaussian(a2=500.0))
    split: float = 0.5
    train_fraction: float = 0.9
    support_px: int | None = None


def generate_dataset(
    config: OpticalConfig,
    masks: tuple,
    n_examples: int,
    scene_params: DatasetParams,
    noise: NoiseParams,
    out_dir,
    seed: int = 0,
) -> dict:
    """Write n simulated image pairs, a labels CSV and a reproducibility manifest.

    Per-example seeds are derived from (seed, example index), so re-running
    with the same manifest reproduces every output byte for byte.
    """
    out = Path(out_dir)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    mask1, mask2 = masks
    pitch = mask1.grid.pitch_um
    window_px = int(round(scene_params.fov_um / pitch))

    labels = []
    for i in range(n_examples):
        scene = sample_scene(
            scene_params.density_per_um2,
            scene_params.fov_um,
            scene_params.z_range_um,
            scene_params.photons_range,
            seed=[seed, i, 0],
            background=scene_params.background,
            split=scene_params.split,
        )
        pair = render_scene(config, mask1, mask2, scene, window_px, scene_params.support_px)
        bg = super_gaussian_background(scene.background, pair.ch1.pixels.shape)
        for ch, img in enumerate((pair.ch1, pair.ch2), start=1):
            noisy = sample_measurement(img, bg, noise, seed=[seed, i, ch])
            ser.save_image(images / f"ex{i:05d}_ch{ch}.f32", noisy)
        labels.extend((i, em.x_um, em.y_um, em.z_um, em.photons) for em in scene.emitters)

    ser.write_labels_csv(out / "labels.csv", labels)
    ser.save_mask(out / "mask1.f32", mask1, config)
    ser.save_mask(out / "mask2.f32", mask2, config)
    n_train = int(round(scene_params.train_fraction * n_examples))
    manifest = {
        "n_examples": n_examples,
        "split": {"train": n_train, "holdout": n_examples - n_train},
        "seed": seed,
        "window_px": window_px,
        "masks": {
            "mask1": ser.sha256_file(out / "mask1.f32"),
            "mask2": ser.sha256_file(out / "mask2.f32"),
        },
        "optical": {k: getattr(config, k) for k in config.__dataclass_fields__},
        "noise": {"baseline": noise.baseline, "read_sigma": noise.read_sigma, "mode": noise.mode},
        "scene_params": {
            "density_per_um2": scene_params.density_per_um2,
            "fov_um": scene_params.fov_um,
            "z_range_um": list(scene_params.z_range_um),
            "photons_range": list(scene_params.photons_range),
            "background": {
                "a1": scene_params.background.a1,
                "a2": scene_params.background.a2,
                "mu_px": list(scene_params.background.mu_px),
                "cov": [list(r) for r in scene_params.background.cov],
                "p": scene_params.background.p,
            },
            "split": scene_params.split,
            "train_fraction": scene_params.train_fraction,
        },
    }
    ser.write_json(out / "manifest.json", manifest)
    return manifest
