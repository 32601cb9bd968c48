"""Matched-filter baseline decoder for dual-channel frames.

Detection cross-correlates both registered channels against a bank of
unit-norm PSF templates spanning the axial range, averages the per-channel
normalized correlations (channels carry independent information, so their
evidence combines additively), and writes the result into a 3D confidence
grid bounded to [0, W].  The grid is reduced to a localization list with the
reference post-processing: confidence threshold (80 of 800), local-maxima
grouping within a 100 nm radius, and a confidence-weighted center of gravity.
An optional per-emitter maximum-likelihood refinement polishes positions and
photon counts under the Poisson model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import maximum_filter, zoom
from scipy.signal import fftconvolve

from .crlb import _eval_points, DEFAULT_STEPS_UM
from .evalmatch import VoxelGrid
from .noise import NoiseParams
from .optics import Emitter, OpticalConfig, PhaseMask, _psf_forward, compute_psf
from .scene import ImagePair

__all__ = [
    "TemplateBank",
    "RecoveryGrid",
    "Localization",
    "build_template_bank",
    "detect",
    "grid_postprocess",
    "refine_mle",
    "merge_close",
    "localize_pair",
]


@dataclass(frozen=True)
class Localization:
    """One recovered emitter."""

    x_um: float
    y_um: float
    z_um: float
    confidence: float = 0.0
    frame: int = 0
    photons: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.x_um) and np.isfinite(self.y_um) and np.isfinite(self.z_um)):
            raise ValueError("localization coordinates must be finite")


@dataclass(eq=False)
class TemplateBank:
    """Per-(channel, depth) unit-norm PSF templates on the camera pitch."""

    z_knots: np.ndarray
    window_px: int
    pitch_um: float
    templates: np.ndarray  # (2, nz, w, w), each unit L2 norm
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class RecoveryGrid:
    """Confidence volume geometry; values live in [0, w_max] once filled."""

    voxel_xy_um: float = 0.0275
    voxel_z_um: float = 0.050
    w_max: float = 800.0
    origin_um: tuple = (0.0, 0.0, 0.0)  # (z, y, x)
    values: np.ndarray | None = None

    def geometry(self, shape=None) -> VoxelGrid:
        shape = shape if shape is not None else self.values.shape
        return VoxelGrid(tuple(shape), self.voxel_xy_um, self.voxel_z_um, self.origin_um)


def _default_window(pitch_um: float, extent_um: float = 2.2) -> int:
    w = int(round(extent_um / pitch_um))
    return max(w | 1, 15)


def build_template_bank(
    config: OpticalConfig,
    mask1: PhaseMask,
    mask2: PhaseMask,
    z_step_um: float,
    range_um: float,
    window_px: int | None = None,
) -> TemplateBank:
    """Render on-axis, background-free templates every z_step over [0, range]."""
    if z_step_um <= 0.0:
        raise ValueError("z_step_um must be > 0")
    pitch = mask1.grid.pitch_um
    if window_px is None:
        window_px = min(_default_window(pitch), mask1.grid.padded_n - 1 - (mask1.grid.padded_n % 2))
    n_knots = int(round(range_um / z_step_um)) + 1
    z_knots = np.arange(n_knots) * z_step_um
    templates = np.empty((2, n_knots, window_px, window_px))
    for k, mask in enumerate((mask1, mask2)):
        for i, z in enumerate(z_knots):
            t = compute_psf(config, mask, Emitter(z_um=float(z), photons=1.0), window_px).pixels
            templates[k, i] = t / np.linalg.norm(t)
    return TemplateBank(
        z_knots=z_knots,
        window_px=window_px,
        pitch_um=pitch,
        templates=templates,
        meta={"z_step_um": z_step_um, "range_um": range_um, "window_px": window_px},
    )


def _zncc(image: np.ndarray, template: np.ndarray, sums=None):
    """Zero-mean normalized cross-correlation map, zero where undefined."""
    t0 = template - template.mean()
    norm_t = np.linalg.norm(t0)
    if norm_t == 0.0:
        return np.zeros_like(image)
    if sums is None:
        sums = _local_sums(image, template.shape[0])
    s1, s2 = sums
    npx = template.size
    var = np.clip(s2 - s1 * s1 / npx, 0.0, None)
    den = norm_t * np.sqrt(var)
    num = fftconvolve(image, t0[::-1, ::-1], mode="same")
    scale = max(float(np.abs(image).max()), 1.0)
    out = np.zeros_like(image)
    good = den > 1e-9 * scale
    out[good] = num[good] / den[good]
    return out


def _local_sums(image: np.ndarray, w: int):
    box = np.ones((w, w))
    s1 = fftconvolve(image, box, mode="same")
    s2 = fftconvolve(image * image, box, mode="same")
    return s1, s2


def detect(pair: ImagePair, bank: TemplateBank, grid: RecoveryGrid, margin_px: int | None = None) -> RecoveryGrid:
    """Fill a confidence grid from the mean of per-channel template correlations.

    Each axial knot writes one z layer: confidence = w_max * max(0, mean of
    the two channels' zero-mean normalized correlations), resampled onto the
    lateral voxel lattice; values are clipped to [0, w_max].  A border strip
    of `margin_px` camera pixels (default: half the template window, where
    the correlation support hangs off the frame) is zeroed.
    """
    images = (pair.ch1.pixels, pair.ch2.pixels)
    if images[0].shape != images[1].shape:
        raise ValueError("channel shapes differ")
    if bank.window_px > min(images[0].shape):
        raise ValueError("template window exceeds the image")
    if margin_px is None:
        margin_px = bank.window_px // 2
    h, w = images[0].shape
    pitch = pair.ch1.pitch_um
    ny = int(round(h * pitch / grid.voxel_xy_um))
    nx = int(round(w * pitch / grid.voxel_xy_um))
    nz = int(round((bank.z_knots[-1] - grid.origin_um[0]) / grid.voxel_z_um)) + 1

    values = np.zeros((nz, ny, nx))
    sums = [_local_sums(img, bank.window_px) for img in images]
    for i, z in enumerate(bank.z_knots):
        combined = 0.5 * sum(
            _zncc(img, bank.templates[k, i], sums[k]) for k, img in enumerate(images)
        )
        if margin_px > 0:
            inner = np.zeros_like(combined)
            inner[margin_px:-margin_px, margin_px:-margin_px] = combined[
                margin_px:-margin_px, margin_px:-margin_px
            ]
            combined = inner
        layer = int(round((z - grid.origin_um[0]) / grid.voxel_z_um))
        if not 0 <= layer < nz:
            continue
        conf = grid.w_max * np.clip(combined, 0.0, None)
        if (ny, nx) != combined.shape:
            conf = zoom(conf, (ny / h, nx / w), order=1, grid_mode=True, mode="grid-constant")
        values[layer] = np.maximum(values[layer], np.clip(conf, 0.0, grid.w_max))
    return replace(grid, values=values)


def _ball_footprint(radius_um, voxel_z, voxel_xy):
    rz = int(np.floor(radius_um / voxel_z))
    rxy = int(np.floor(radius_um / voxel_xy))
    dz, dy, dx = np.mgrid[-rz : rz + 1, -rxy : rxy + 1, -rxy : rxy + 1]
    return (dz * voxel_z) ** 2 + (dy * voxel_xy) ** 2 + (dx * voxel_xy) ** 2 <= radius_um**2 + 1e-12


def grid_postprocess(grid: RecoveryGrid, threshold: float = 80.0, radius_um: float = 0.1, frame: int = 0):
    """Threshold, keep local maxima, group within the radius, and take the CoG.

    Survivors are ranked by (confidence desc, then z, y, x ascending); a
    candidate within the radius of an already-kept one is discarded.  The
    continuous position is the confidence-weighted centroid of thresholded
    voxels in the kept maximum's neighborhood.
    """
    if not 0.0 <= threshold <= grid.w_max:
        raise ValueError("threshold must lie in [0, w_max]")
    vals = grid.values
    if vals is None:
        raise ValueError("grid has no confidence values; run detect first")
    fp = _ball_footprint(radius_um, grid.voxel_z_um, grid.voxel_xy_um)
    local_max = vals == maximum_filter(vals, footprint=fp, mode="constant")
    cand_idx = np.argwhere(local_max & (vals >= threshold))
    if len(cand_idx) == 0:
        return []
    conf = vals[tuple(cand_idx.T)]
    order = np.lexsort((cand_idx[:, 2], cand_idx[:, 1], cand_idx[:, 0], -conf))
    cand_idx = cand_idx[order]
    conf = conf[order]

    vz, vxy = grid.voxel_z_um, grid.voxel_xy_um
    oz, oy, ox = grid.origin_um

    def center_um(idx):
        return np.array(
            [oz + (idx[0] + 0.5) * vz, oy + (idx[1] + 0.5) * vxy, ox + (idx[2] + 0.5) * vxy]
        )

    kept: list[np.ndarray] = []
    kept_idx = []
    for idx, c in zip(cand_idx, conf):
        pos = center_um(idx)
        if any(np.sum((pos - q) ** 2) <= radius_um**2 + 1e-12 for q in kept):
            continue
        kept.append(pos)
        kept_idx.append((idx, c))

    rz, rxy = fp.shape[0] // 2, fp.shape[1] // 2
    locs = []
    for idx, c in kept_idx:
        z0, y0, x0 = idx
        zs = slice(max(z0 - rz, 0), min(z0 + rz + 1, vals.shape[0]))
        ys = slice(max(y0 - rxy, 0), min(y0 + rxy + 1, vals.shape[1]))
        xs = slice(max(x0 - rxy, 0), min(x0 + rxy + 1, vals.shape[2]))
        block = vals[zs, ys, xs]
        sub = fp[
            zs.start - (z0 - rz) : fp.shape[0] - ((z0 + rz + 1) - zs.stop),
            ys.start - (y0 - rxy) : fp.shape[1] - ((y0 + rxy + 1) - ys.stop),
            xs.start - (x0 - rxy) : fp.shape[2] - ((x0 + rxy + 1) - xs.stop),
        ]
        weights = np.where(sub & (block >= threshold), block, 0.0)
        zz, yy, xx = np.mgrid[zs, ys, xs]
        total = weights.sum()
        z_um = oz + ((weights * zz).sum() / total + 0.5) * vz
        y_um = oy + ((weights * yy).sum() / total + 0.5) * vxy
        x_um = ox + ((weights * xx).sum() / total + 0.5) * vxy
        locs.append(Localization(x_um, y_um, z_um, confidence=float(c), frame=frame))
    return locs


def _likelihood(images, models, floor=1e-9):
    total = 0.0
    for img, m in zip(images, models):
        mm = np.clip(m, floor, None)
        total += float(np.sum(img * np.log(mm) - mm))
    return total


def refine_mle(
    pair: ImagePair,
    candidates,
    config: OpticalConfig,
    masks,
    noise: NoiseParams,
    max_iter: int = 15,
    background=0.0,
    split: float = 0.5,
    fit_window_px: int | None = None,
    steps_um=DEFAULT_STEPS_UM,
    z_max_um: float = 10.0,
):
    """Fisher-scoring ascent of the Poisson likelihood per candidate.

    Each candidate is refined independently over (x, y, z, photons) against
    both channel windows; a step is accepted only if the likelihood does not
    decrease, so refined positions never score worse than their candidates.
    The position is confined to the fit window and z to [0, z_max_um]; a
    runaway fit (only possible on spurious candidates) stops at the bounds.
    Read-noise baseline counts are subtracted from the data before the
    Poisson comparison; `background` is the expected background photon level
    (scalar or full-frame image per channel).
    """
    mask1, mask2 = masks
    pitch = pair.ch1.pitch_um
    if fit_window_px is None:
        fit_window_px = _default_window(pitch)
    h = fit_window_px // 2
    frames = [pair.ch1.pixels - noise.baseline, pair.ch2.pixels - noise.baseline]
    bgs = []
    for k in range(2):
        bg = background[k] if isinstance(background, (list, tuple)) else background
        bgs.append(np.asarray(bg, dtype=float))
    fracs = (split, 1.0 - split)

    out = []
    for cand in candidates:
        c0 = int(np.clip(round(cand.x_um / pitch - 0.5), h, frames[0].shape[1] - 1 - h))
        r0 = int(np.clip(round(cand.y_um / pitch - 0.5), h, frames[0].shape[0] - 1 - h))
        win = (slice(r0 - h, r0 + h + 1), slice(c0 - h, c0 + h + 1))
        data = [f[win] for f in frames]
        bg_win = [b[win] if b.ndim == 2 else float(b) for b in bgs]
        center_um = np.array([(c0 + 0.5) * pitch, (r0 + 0.5) * pitch])

        theta = np.array([cand.x_um - center_um[0], cand.y_um - center_um[1], max(cand.z_um, 0.0), 0.0])
        psfs = [
            _psf_forward(config, m, Emitter(theta[0], theta[1], theta[2], 1.0), fit_window_px)[0]
            for m in (mask1, mask2)
        ]
        num = sum(np.sum((d - b) * f * p) for d, b, f, p in zip(data, bg_win, fracs, psfs))
        den = sum(np.sum((f * p) ** 2) for f, p in zip(fracs, psfs))
        theta[3] = max(num / max(den, 1e-12), 1.0)

        def models_for(t):
            ms = []
            for m, f in zip((mask1, mask2), fracs):
                p = _psf_forward(config, m, Emitter(t[0], t[1], t[2], 1.0), fit_window_px)[0]
                ms.append(t[3] * f * p)
            return [mm + b for mm, b in zip(ms, bg_win)]

        ll = _likelihood(data, models_for(theta))
        converged = False
        for _ in range(max_iter):
            grad = np.zeros(4)
            fim = np.zeros((4, 4))
            for k, (m, f) in enumerate(zip((mask1, mask2), fracs)):
                pts, one_sided = _eval_points(Emitter(theta[0], theta[1], theta[2]), steps_um)
                w = {
                    name: _psf_forward(config, m, Emitter(*xyz, 1.0), fit_window_px)[0]
                    for name, xyz in pts.items()
                }
                dx, dy, dz = steps_um
                if one_sided:
                    d_z = (-3.0 * w["c"] + 4.0 * w["z+"] - w["z++"]) / (2.0 * dz)
                else:
                    d_z = (w["z+"] - w["z-"]) / (2.0 * dz)
                dm = [
                    theta[3] * f * (w["x+"] - w["x-"]) / (2.0 * dx),
                    theta[3] * f * (w["y+"] - w["y-"]) / (2.0 * dy),
                    theta[3] * f * d_z,
                    f * w["c"],
                ]
                model = np.clip(theta[3] * f * w["c"] + bg_win[k], 1e-9, None)
                resid = data[k] / model - 1.0
                for i in range(4):
                    grad[i] += np.sum(resid * dm[i])
                    for j in range(i, 4):
                        fim[i, j] += np.sum(dm[i] * dm[j] / model)
            fim = fim + np.triu(fim, 1).T
            fim[np.diag_indices(4)] += 1e-9 * max(fim.max(), 1.0)
            try:
                step = np.linalg.solve(fim, grad)
            except np.linalg.LinAlgError:
                warnings.warn("singular scoring matrix; keeping candidate")
                break
            bound = (h + 1.0) * pitch
            accepted = False
            for _ in range(6):
                trial = theta + step
                trial[0] = np.clip(trial[0], -bound, bound)
                trial[1] = np.clip(trial[1], -bound, bound)
                trial[2] = np.clip(trial[2], 0.0, z_max_um)
                trial[3] = max(trial[3], 1.0)
                ll_new = _likelihood(data, models_for(trial))
                if np.isfinite(ll_new) and ll_new >= ll:
                    theta, ll, accepted = trial, ll_new, True
                    break
                step = step / 2.0
            if not accepted:
                converged = True
                break
            if max(abs(step[0]), abs(step[1]), abs(step[2])) < 1e-6:
                converged = True
                break
        if max_iter > 0 and not converged and not np.all(np.isfinite(theta)):
            warnings.warn("MLE refinement diverged; keeping candidate")
            out.append(cand)
            continue
        out.append(
            Localization(
                x_um=center_um[0] + theta[0],
                y_um=center_um[1] + theta[1],
                z_um=theta[2],
                confidence=cand.confidence,
                frame=cand.frame,
                photons=float(theta[3]),
            )
        )
    return out


def merge_close(locs, radius_um: float, key=lambda l: l.confidence):
    """Keep the best localization within each radius_um cluster (greedy)."""
    kept = []
    for loc in sorted(locs, key=key, reverse=True):
        p = np.array([loc.x_um, loc.y_um, loc.z_um])
        if any((p[0] - k.x_um) ** 2 + (p[1] - k.y_um) ** 2 + (p[2] - k.z_um) ** 2 <= radius_um**2 for k in kept):
            continue
        kept.append(loc)
    return kept


def localize_pair(
    pair: ImagePair,
    bank: TemplateBank,
    config: OpticalConfig,
    masks,
    noise: NoiseParams,
    grid: RecoveryGrid | None = None,
    threshold: float = 80.0,
    radius_um: float = 0.1,
    refine: bool = True,
    background=0.0,
    split: float = 0.5,
    frame: int = 0,
    max_iter: int = 15,
):
    """Full baseline pipeline: detect, post-process, optionally MLE-refine."""
    if grid is None:
        grid = RecoveryGrid(voxel_xy_um=pair.ch1.pitch_um / 2.0, voxel_z_um=bank.meta.get("z_step_um", 0.05))
    filled = detect(pair, bank, grid)
    locs = grid_postprocess(filled, threshold=threshold, radius_um=radius_um, frame=frame)
    if refine and locs:
        locs = refine_mle(
            pair, locs, config, masks, noise, max_iter=max_iter, background=background, split=split
        )
        locs = merge_close(locs, radius_um)
    return locs
