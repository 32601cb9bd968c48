"""Scalar-diffraction forward model for phase-mask engineered PSFs.

A point emitter at depth ``z`` above the coverslip is imaged through an
oil-immersion objective whose back focal plane carries a programmable phase
mask.  The PSF is the squared modulus of the Fourier transform of the pupil
field: a hard aperture (limited by the sample index for high-NA objectives)
times a pure phase that combines the mask, a linear ramp encoding the lateral
position, and the index-mismatch defocus term.

Conventions used throughout the package:

* all lengths in micrometers, all phases in radians;
* image arrays are indexed ``[row, col]`` with x along columns and y along
  rows, both increasing with index;
* the optical axis sits on the exact center pixel ``(w//2, w//2)`` of any
  odd-sized window;
* one FFT output bin spans ``pixel_um / oversample`` in sample space, where
  ``oversample`` equals the zero-padding factor of the pupil grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "OpticalConfig",
    "PupilGrid",
    "PhaseMask",
    "Emitter",
    "Image",
    "make_pupil_grid",
    "defocus_phase",
    "lateral_phase",
    "compute_psf",
    "psf_zstack",
    "window_coords",
]


@dataclass(frozen=True)
class OpticalConfig:
    """Scalar constants of the imaging system.

    Defaults describe the reference rig: a 1.49 NA, 100x oil objective
    (n1 = 1.518) imaging emitters suspended in water (n2 = 1.33) onto a
    camera with 110 nm pixels in sample space.  ``blur_sigma_um`` is the
    empirical image-space Gaussian accounting for emitter size, spectrum
    and residual system blur.  ``focus_um`` is the nominal focal-plane
    setting measured from the coverslip into the immersion oil.
    """

    wavelength_um: float = 0.605
    na: float = 1.49
    magnification: float = 100.0
    n_immersion: float = 1.518
    n_sample: float = 1.33
    pixel_um: float = 0.110
    blur_sigma_um: float = 0.070
    focus_um: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.na < self.n_immersion:
            raise ConfigError(f"need 0 < na < n_immersion, got na={self.na}, n1={self.n_immersion}")
        if not 0.0 < self.n_sample <= self.n_immersion:
            raise ConfigError(f"need 0 < n_sample <= n_immersion, got n2={self.n_sample}, n1={self.n_immersion}")
        for name in ("wavelength_um", "pixel_um", "blur_sigma_um"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be > 0")
        if self.magnification <= self.na:
            raise ConfigError("magnification must exceed na")

    @property
    def effective_na(self) -> float:
        """Slope of the lateral phase ramp, M*NA/sqrt(M^2 - NA^2)."""
        m, na = self.magnification, self.na
        return m * na / np.sqrt(m * m - na * na)

    @property
    def aperture_cutoff(self) -> float:
        """Normalized pupil radius of the effective aperture, n2/n1."""
        return self.n_sample / self.n_immersion


@dataclass(frozen=True, eq=False)
class PupilGrid:
    """Discretized pupil plane.

    ``rho`` is the normalized radial coordinate (rho = 1 at NA/n1) and
    ``aperture`` is the binary mask open where rho <= n2/n1.  The grid is
    sampled so that an FFT padded to ``n * fft_pad`` yields image bins of
    exactly ``pixel_um / fft_pad``; ``oversample`` reports that factor.
    """

    n: int
    fft_pad: int
    rho: np.ndarray
    phi: np.ndarray
    aperture: np.ndarray
    rho_x: np.ndarray = field(repr=False)
    rho_y: np.ndarray = field(repr=False)
    drho: float = field(repr=False)
    pitch_um: float = 0.0
    oversample: int = 1

    @property
    def padded_n(self) -> int:
        return self.n * self.fft_pad

    @property
    def aperture_sum(self) -> float:
        return float(self.aperture.sum())


@dataclass(eq=False)
class PhaseMask:
    """Real phase surface on the pupil grid; values outside the aperture are inert."""

    values: np.ndarray
    grid: PupilGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"mask shape {self.values.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mask values must be finite")

    @classmethod
    def zero(cls, grid: PupilGrid) -> "PhaseMask":
        return cls(np.zeros((grid.n, grid.n)), grid)

    def with_values(self, values: np.ndarray) -> "PhaseMask":
        return PhaseMask(values, self.grid)


@dataclass(frozen=True)
class Emitter:
    """Point source at (x, y, z) with an expected signal photon count.

    z is measured from the coverslip into the sample and must be >= 0.
    """

    x_um: float = 0.0
    y_um: float = 0.0
    z_um: float = 0.0
    photons: float = 1.0

    def __post_init__(self):
        if self.z_um < 0.0:
            raise ValueError(f"emitter z must be >= 0, got {self.z_um}")
        if self.photons < 0.0:
            raise ValueError(f"photons must be >= 0, got {self.photons}")


@dataclass(eq=False)
class Image:
    """2D array of expected (or measured) photon counts with its pixel pitch."""

    pixels: np.ndarray
    pitch_um: float

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise ValueError("image must be 2D")


def make_pupil_grid(config: OpticalConfig, n: int = 256, fft_pad: int = 1) -> PupilGrid:
    """Discretize the pupil so FFT bins land on pixel_um / fft_pad in sample space.

    The returned grid stores the achieved oversampling factor (== fft_pad).
    Raises ConfigError when the aperture would span fewer than 8 pixels or
    would not fit inside the n x n grid.
    """
    if n < 16:
        raise ConfigError(f"pupil grid n must be >= 16, got {n}")
    if fft_pad < 1 or int(fft_pad) != fft_pad:
        raise ConfigError(f"fft_pad must be an integer >= 1, got {fft_pad}")
    fft_pad = int(fft_pad)

    # One pupil sample corresponds to a frequency step of 1/(n * pixel_um);
    # rho = 1 maps to the cutoff frequency effective_na / wavelength.
    drho = config.wavelength_um / (n * config.pixel_um * config.effective_na)
    c = (np.arange(n) - n // 2) * drho
    rho_x = np.broadcast_to(c[None, :], (n, n))
    rho_y = np.broadcast_to(c[:, None], (n, n))
    rho = np.hypot(rho_x, rho_y)
    phi = np.arctan2(rho_y, rho_x)

    cutoff = config.aperture_cutoff
    aperture = (rho <= cutoff).astype(float)

    diameter_px = 2.0 * cutoff / drho
    if diameter_px < 8.0:
        raise ConfigError(
            f"aperture spans only {diameter_px:.1f} pupil pixels (< 8); increase n or pixel_um"
        )
    if diameter_px > n:
        raise ConfigError(
            f"aperture ({diameter_px:.1f} px) does not fit the {n} px pupil grid; camera pixels undersample"
        )

    return PupilGrid(
        n=n,
        fft_pad=fft_pad,
        rho=rho,
        phi=phi,
        aperture=aperture,
        rho_x=np.array(rho_x),
        rho_y=np.array(rho_y),
        drho=drho,
        pitch_um=config.pixel_um / fft_pad,
        oversample=fft_pad,
    )


def defocus_phase(config: OpticalConfig, grid: PupilGrid, z_um: float, focus_um: float) -> np.ndarray:
    """Axial pupil phase (radians) for emitter depth z and focus setting f.

    Splits into the phase accumulated in the sample medium above the
    coverslip and the (negative) phase of the focus shift in immersion oil:
    (2 pi / lambda) * [z n2 sqrt(1 - (n1/n2)^2 rho^2) - f n1 sqrt(1 - rho^2)],
    evaluated inside the aperture and zero outside.  Inside the aperture
    rho <= n2/n1, so both square roots stay real.
    """
    if z_um < 0.0:
        raise ValueError(f"z must be >= 0, got {z_um}")
    n1, n2 = config.n_immersion, config.n_sample
    rho2 = grid.rho * grid.rho
    water = np.sqrt(np.clip(1.0 - (n1 / n2) ** 2 * rho2, 0.0, None))
    oil = np.sqrt(np.clip(1.0 - rho2, 0.0, None))
    phase = (2.0 * np.pi / config.wavelength_um) * (z_um * n2 * water - focus_um * n1 * oil)
    return np.where(grid.aperture > 0, phase, 0.0)


def lateral_phase(config: OpticalConfig, grid: PupilGrid, x_um: float, y_um: float) -> np.ndarray:
    """Linear pupil ramp (radians) displacing the PSF by (x, y) in sample space."""
    coeff = 2.0 * np.pi / config.wavelength_um * config.effective_na
    return coeff * (x_um * grid.rho_x + y_um * grid.rho_y)


def window_coords(window_px: int, pitch_um: float):
    """Centered (x, y) coordinate arrays for an odd window; axis at (w//2, w//2)."""
    c = (np.arange(window_px) - window_px // 2) * pitch_um
    return c[None, :], c[:, None]


# ---------------------------------------------------------------------------
# FFT plumbing.  The centered DFT below is its own matrix transpose, which the
# mask-gradient adjoint relies on.


def _cfft2(x: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x)))


_TRANSFER_CACHE: dict = {}


def _gaussian_transfer(shape, sigma_px: float) -> np.ndarray:
    key = (shape, round(sigma_px, 12))
    h = _TRANSFER_CACHE.get(key)
    if h is None:
        fy = np.fft.fftfreq(shape[0])[:, None]
        fx = np.fft.rfftfreq(shape[1])[None, :]
        h = np.exp(-2.0 * np.pi**2 * sigma_px**2 * (fx * fx + fy * fy))
        if len(_TRANSFER_CACHE) > 64:
            _TRANSFER_CACHE.clear()
        _TRANSFER_CACHE[key] = h
    return h


def _blur(image: np.ndarray, sigma_px: float) -> np.ndarray:
    """Circular convolution with a unit-sum Gaussian via its transfer function.

    Exact energy conservation (H(0) = 1) and self-adjoint, since the transfer
    function is real and even.
    """
    if sigma_px <= 0.0:
        return image
    h = _gaussian_transfer(image.shape, sigma_px)
    return np.fft.irfft2(np.fft.rfft2(image) * h, s=image.shape)


def _embed(pupil_field: np.ndarray, padded_n: int) -> np.ndarray:
    n = pupil_field.shape[0]
    if padded_n == n:
        return pupil_field
    out = np.zeros((padded_n, padded_n), dtype=pupil_field.dtype)
    o = padded_n // 2 - n // 2
    out[o : o + n, o : o + n] = pupil_field
    return out


def _crop(image: np.ndarray, window_px: int) -> np.ndarray:
    c = image.shape[0] // 2
    h = window_px // 2
    return image[c - h : c + h + 1, c - h : c + h + 1]


@dataclass(eq=False)
class _PsfContext:
    """Saved intermediates of one PSF evaluation, for the mask-gradient adjoint."""

    field: np.ndarray  # embedded pupil field A * exp(j psi), padded
    spectrum: np.ndarray  # centered FFT of `field`
    scale: float  # photons / (N^2 * sum(A))
    sigma_px: float
    window_px: int
    n: int


def _psf_forward(
    config: OpticalConfig,
    mask: PhaseMask,
    emitter: Emitter,
    window_px: int,
    want_ctx: bool = False,
):
    grid = mask.grid
    if window_px % 2 == 0:
        raise ValueError(f"window_px must be odd, got {window_px}")
    if window_px > grid.padded_n:
        raise ValueError(f"window_px={window_px} exceeds padded FFT size {grid.padded_n}")

    phase = mask.values + defocus_phase(config, grid, emitter.z_um, config.focus_um)
    if emitter.x_um != 0.0 or emitter.y_um != 0.0:
        phase = phase + lateral_phase(config, grid, emitter.x_um, emitter.y_um)
    pupil = grid.aperture * np.exp(1j * phase)
    field = _embed(pupil, grid.padded_n)
    spectrum = _cfft2(field)

    # Pure-phase pupil modulation conserves energy, so this one constant pins
    # the full-grid PSF sum to the photon budget for every mask and depth.
    scale = emitter.photons / (grid.padded_n**2 * grid.aperture_sum)
    intensity = (spectrum.real**2 + spectrum.imag**2) * scale
    sigma_px = config.blur_sigma_um / grid.pitch_um
    blurred = _blur(intensity, sigma_px)
    window = _crop(blurred, window_px).copy()

    if not want_ctx:
        return window, None
    return window, _PsfContext(field, spectrum, scale, sigma_px, window_px, grid.n)


def _psf_mask_gradient(ctx: _PsfContext, cotangent: np.ndarray) -> np.ndarray:
    """Adjoint of `_psf_forward` w.r.t. the mask values.

    `cotangent` is dL/d(window); returns dL/d(mask), shape n x n.  Crop,
    blur and the centered DFT are all self-adjoint linear maps, so the
    backward pass reuses the forward operators.
    """
    padded_n = ctx.field.shape[0]
    w = np.zeros((padded_n, padded_n))
    c, h = padded_n // 2, ctx.window_px // 2
    w[c - h : c + h + 1, c - h : c + h + 1] = cotangent
    w = _blur(w, ctx.sigma_px) * ctx.scale
    x = _cfft2(w * np.conj(ctx.spectrum))
    g_full = -2.0 * np.imag(ctx.field * x)
    o = padded_n // 2 - ctx.n // 2
    return g_full[o : o + ctx.n, o : o + ctx.n].copy()


def compute_psf(config: OpticalConfig, mask: PhaseMask, emitter: Emitter, window_px: int) -> Image:
    """Render the PSF of one emitter into an odd window centered on the axis.

    The image is |FFT(aperture * exp(j(mask + lateral + defocus)))|^2,
    normalized so the sum over the full padded grid equals emitter.photons,
    then blurred by the configured image-space Gaussian and cropped.
    """
    window, _ = _psf_forward(config, mask, emitter, window_px)
    return Image(window, mask.grid.pitch_um)


def psf_zstack(config: OpticalConfig, mask: PhaseMask, z_list, window_px: int) -> list[Image]:
    """Render on-axis PSFs at each depth in z_list (slices are independent)."""
    if len(z_list) == 0:
        raise ValueError("z_list must be nonempty")
    return [compute_psf(config, mask, Emitter(z_um=float(z)), window_px) for z in z_list]
