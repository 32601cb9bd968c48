"""Dual-channel geometric calibration and scan-based ground-truth estimation.

The two detection paths are related by an affine map estimated from matched
bead localizations with RANSAC (outliers from mismatched or dim beads are
common), then applied by warping channel 2 onto channel 1 with cubic-spline
interpolation.  Axial ground truth for scan data comes from a quadratic fit
to the per-slice mean intensity of each bead, with the in-focus position
scaled by the refractive-index-mismatch correction factor 0.8.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import EstimationFailedError
from .optics import Emitter, Image

__all__ = ["AffineTransform", "estimate_affine_ransac", "warp_image", "axial_gt_fit"]


@dataclass(frozen=True)
class AffineTransform:
    """p1 = a @ p2 + t, coordinates in micrometers."""

    a: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(2, 2)
        t = np.asarray(self.t, dtype=float).reshape(2)
        if abs(np.linalg.det(a)) < 1e-12:
            raise ValueError("affine matrix must be invertible")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "t", t)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float).reshape(-1, 2) @ self.a.T + self.t

    def inverse(self) -> "AffineTransform":
        a_inv = np.linalg.inv(self.a)
        return AffineTransform(a_inv, -a_inv @ self.t)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2), np.zeros(2))

    def to_dict(self, inliers: int | None = None, rms_um: float | None = None) -> dict:
        d = {"a": self.a.tolist(), "t": self.t.tolist()}
        if inliers is not None:
            d["inliers"] = int(inliers)
        if rms_um is not None:
            d["rms_um"] = float(rms_um)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform":
        return cls(np.array(d["a"]), np.array(d["t"]))


def _fit_affine(pts1: np.ndarray, pts2: np.ndarray) -> AffineTransform:
    """Least-squares affine from pts2 to pts1."""
    design = np.column_stack([pts2, np.ones(len(pts2))])
    sol, *_ = np.linalg.lstsq(design, pts1, rcond=None)
    return AffineTransform(sol[:2].T, sol[2])


def _collinear(pts: np.ndarray) -> bool:
    u, v = pts[1] - pts[0], pts[2] - pts[0]
    area = u[0] * v[1] - u[1] * v[0]
    scale = max(np.abs(pts - pts[0]).max(), 1.0)
    return abs(area) < 1e-9 * scale * scale


def estimate_affine_ransac(
    pts1,
    pts2,
    iters: int = 1000,
    inlier_um: float = 0.22,
    min_sample: int = 3,
    seed: int = 0,
):
    """RANSAC affine estimate mapping pts2 onto pts1; returns (transform, inlier mask).

    The consensus transform is refit by least squares on its inliers.  The
    default inlier gate of two camera pixels is deliberately loose; the
    refit tightens the result.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    n = len(pts1)
    if n != len(pts2):
        raise ValueError("point sets must have equal length")
    if n < min_sample:
        raise ValueError(f"need at least {min_sample} correspondences, got {n}")

    rng = np.random.default_rng(seed)
    # a fitted minimal sample always matches itself; demand wider support
    min_consensus = min_sample + 1 if n > min_sample else min_sample
    best = None  # (count, -rms, transform, mask)
    for _ in range(iters):
        idx = rng.choice(n, min_sample, replace=False)
        if _collinear(pts2[idx]):
            continue
        try:
            cand = _fit_affine(pts1[idx], pts2[idx])
        except ValueError:
            continue
        resid = np.linalg.norm(cand.apply(pts2) - pts1, axis=1)
        mask = resid <= inlier_um
        count = int(mask.sum())
        if count < min_consensus:
            continue
        rms = float(np.sqrt(np.mean(resid[mask] ** 2)))
        key = (count, -rms)
        if best is None or key > best[0]:
            best = (key, cand, mask)
    if best is None:
        raise EstimationFailedError(f"no affine consensus after {iters} iterations")

    _, _, mask = best
    refit = _fit_affine(pts1[mask], pts2[mask])
    resid = np.linalg.norm(refit.apply(pts2) - pts1, axis=1)
    mask = resid <= inlier_um
    if mask.sum() < min_sample:
        raise EstimationFailedError("consensus collapsed after least-squares refit")
    refit = _fit_affine(pts1[mask], pts2[mask])
    return refit, mask


def warp_image(img: Image, transform: AffineTransform, method: str = "cubic_spline"):
    """Resample img so that output pixel p holds the input at transform^-1(p).

    Used to bring channel 2 onto channel 1's frame when `transform` maps
    ch2 coordinates to ch1.  Returns (warped Image, validity mask); pixels
    pulled from outside the input domain are 0 and masked invalid.
    """
    order = {"cubic_spline": 3, "linear": 1, "nearest": 0}.get(method)
    if order is None:
        raise ValueError(f"unknown interpolation method {method!r}")
    inv = transform.inverse()
    h, w = img.pixels.shape
    pitch = img.pitch_um
    rows, cols = np.indices((h, w), dtype=float)
    xy_um = np.stack([(cols.ravel() + 0.5) * pitch, (rows.ravel() + 0.5) * pitch], axis=1)
    src = inv.apply(xy_um)
    src_c = src[:, 0] / pitch - 0.5
    src_r = src[:, 1] / pitch - 0.5
    warped = map_coordinates(
        img.pixels, [src_r.reshape(h, w), src_c.reshape(h, w)], order=order, mode="constant", cval=0.0
    )
    valid = (
        (src_r >= 0.0) & (src_r <= h - 1.0) & (src_c >= 0.0) & (src_c <= w - 1.0)
    ).reshape(h, w)
    return Image(warped, pitch), valid


def axial_gt_fit(
    zstack,
    detections,
    scan_step_um: float,
    correction: float = 0.8,
    fit_halfwidth: int = 5,
):
    """Estimate in-focus depths from an axial scan of the unmodulated PSF.

    For each detected (x, y), the mean count of the central 5x5 pixels is
    tracked across slices; a quadratic fit around the peak slice locates the
    in-focus scan position, and the reported z is correction * vertex
    (index-mismatch rescaling).  Returns (emitters, excluded indices);
    detections whose profile peaks at a scan boundary or whose vertex falls
    outside the scan are excluded.
    """
    if len(zstack) < 3:
        raise ValueError("need at least 3 scan slices")
    pitch = zstack[0].pitch_um
    stack = np.stack([s.pixels for s in zstack])
    n_slices = stack.shape[0]
    z_positions = np.arange(n_slices) * scan_step_um

    emitters = []
    excluded = []
    for i, (x_um, y_um) in enumerate(detections):
        c = int(round(x_um / pitch - 0.5))
        r = int(round(y_um / pitch - 0.5))
        if not (2 <= r < stack.shape[1] - 2 and 2 <= c < stack.shape[2] - 2):
            excluded.append(i)
            continue
        profile = stack[:, r - 2 : r + 3, c - 2 : c + 3].mean(axis=(1, 2))
        peak = int(np.argmax(profile))
        if peak == 0 or peak == n_slices - 1:
            excluded.append(i)
            continue
        lo = max(peak - fit_halfwidth, 0)
        hi = min(peak + fit_halfwidth + 1, n_slices)
        coeffs = np.polyfit(z_positions[lo:hi], profile[lo:hi], 2)
        if coeffs[0] >= 0.0:
            excluded.append(i)
            continue
        vertex = -coeffs[1] / (2.0 * coeffs[0])
        if not z_positions[0] <= vertex <= z_positions[-1]:
            excluded.append(i)
            continue
        emitters.append(Emitter(x_um, y_um, max(correction * vertex, 0.0), photons=float(profile[peak])))
    if excluded:
        warnings.warn(f"excluded {len(excluded)} detections with unusable axial profiles")
    return emitters, excluded
