"""Fisher information and Cramer-Rao bounds for engineered PSF pairs.

The Fisher matrix of a single emitter's 3D position follows from Poisson
photon statistics: F_ij = sum_u dP_i dP_j / (P + B), with the PSF position
derivatives taken by central finite differences.  Under independent photon
arrivals the two detection channels add information, so the joint matrix is
the elementwise sum.  The pair-design objective sums sqrt(CRLB) of x, y, z
over on-axis depths and is minimized pixel-wise over both masks jointly with
Adam; the gradient is a hand-derived adjoint of the whole chain, validated
against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .adam import AdamState
from .errors import UnidentifiableParameterError
from .optics import (
    Emitter,
    Image,
    OpticalConfig,
    PhaseMask,
    PupilGrid,
    _psf_forward,
    _psf_mask_gradient,
)

__all__ = [
    "FisherMatrix",
    "CrlbTriple",
    "CrlbEvalSpec",
    "psf_derivatives",
    "derivative_consistency",
    "fisher",
    "fisher_joint",
    "crlb",
    "crlb_objective",
    "crlb_curve",
    "seeded_initial_pair",
    "optimize_pair",
]

AXES = ("x", "y", "z")
DEFAULT_STEPS_UM = (0.005, 0.005, 0.010)


@dataclass(frozen=True)
class FisherMatrix:
    """3x3 information matrix over (x, y, z), photons/um^2."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("Fisher matrix must be 3x3")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.T).max() > 1e-10 * scale:
            raise ValueError("Fisher matrix must be symmetric")
        if np.linalg.eigvalsh(m).min() < -1e-10 * scale:
            raise ValueError("Fisher matrix must be positive semi-definite")
        object.__setattr__(self, "m", m)


@dataclass(frozen=True)
class CrlbTriple:
    """Square roots of the CRLB diagonal, micrometers."""

    sigma_x: float
    sigma_y: float
    sigma_z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma_x, self.sigma_y, self.sigma_z])


@dataclass(frozen=True)
class CrlbEvalSpec:
    """Evaluation grid and photon budget for CRLB work.

    Reference values: on-axis depths every 250 nm, 2000 signal photons per
    emitter, a flat background of 15 photons per pixel, and no read noise
    (pure Poisson statistics).
    """

    z_grid: np.ndarray = field(default_factory=lambda: np.arange(0.0, 4.0 + 1e-9, 0.25))
    signal_photons: float = 2000.0
    background_per_px: float = 15.0
    read_sigma: float = 0.0
    window_px: int = 121

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z_grid, dtype=float))
        if z.size == 0:
            raise ValueError("z_grid must be nonempty")
        object.__setattr__(self, "z_grid", z)

    @classmethod
    def over_range(cls, range_um: float, step_um: float = 0.25, **kw) -> "CrlbEvalSpec":
        n = int(round(range_um / step_um)) + 1
        return cls(z_grid=np.arange(n) * step_um, **kw)


@dataclass(eq=False)
class PsfDerivatives:
    """Central-difference PSF position derivatives (per micrometer)."""

    dx: Image
    dy: Image
    dz: Image
    z_one_sided: bool = False

    def __iter__(self):
        return iter((self.dx, self.dy, self.dz))


def _render(config, mask, x, y, z, photons, window_px, want_ctx=False):
    return _psf_forward(config, mask, Emitter(x, y, z, photons), window_px, want_ctx)


def _eval_points(theta: Emitter, steps_um):
    """Evaluation offsets for the three derivatives; one-sided in z near 0.

    The one-sided branch uses the second-order forward stencil
    (-3 P(z) + 4 P(z+dz) - P(z+2dz)) / (2 dz), which keeps the same accuracy
    order as the central difference and, unlike the first-order form, does
    not manufacture spurious z information at symmetric configurations.
    """
    dx, dy, dz = steps_um
    pts = {
        "c": (theta.x_um, theta.y_um, theta.z_um),
        "x+": (theta.x_um + dx, theta.y_um, theta.z_um),
        "x-": (theta.x_um - dx, theta.y_um, theta.z_um),
        "y+": (theta.x_um, theta.y_um + dy, theta.z_um),
        "y-": (theta.x_um, theta.y_um - dy, theta.z_um),
        "z+": (theta.x_um, theta.y_um, theta.z_um + dz),
    }
    one_sided = theta.z_um - dz < 0.0
    if one_sided:
        pts["z++"] = (theta.x_um, theta.y_um, theta.z_um + 2.0 * dz)
    else:
        pts["z-"] = (theta.x_um, theta.y_um, theta.z_um - dz)
    return pts, one_sided


def psf_derivatives(
    config: OpticalConfig,
    mask: PhaseMask,
    theta: Emitter,
    window_px: int,
    steps_um=DEFAULT_STEPS_UM,
) -> PsfDerivatives:
    """dPSF/dx, dPSF/dy, dPSF/dz at theta; falls back to a forward difference
    in z when a central step would cross z = 0 (flagged on the result)."""
    pts, one_sided = _eval_points(theta, steps_um)
    win = {
        name: _render(config, mask, *xyz, theta.photons, window_px)[0] for name, xyz in pts.items()
    }
    dx, dy, dz = steps_um
    d_x = (win["x+"] - win["x-"]) / (2.0 * dx)
    d_y = (win["y+"] - win["y-"]) / (2.0 * dy)
    if one_sided:
        d_z = (-3.0 * win["c"] + 4.0 * win["z+"] - win["z++"]) / (2.0 * dz)
    else:
        d_z = (win["z+"] - win["z-"]) / (2.0 * dz)
    pitch = mask.grid.pitch_um
    return PsfDerivatives(Image(d_x, pitch), Image(d_y, pitch), Image(d_z, pitch), one_sided)


def _weights(center: np.ndarray, spec: CrlbEvalSpec, family: str):
    """Per-pixel Fisher weight R(v) and dR/dv for v = P + B (+ sigma^2)."""
    v = center + spec.background_per_px
    if family == "poisson":
        if np.any(v <= 0.0):
            raise ValueError("poisson Fisher needs model + background > 0 everywhere")
        return 1.0 / v, -1.0 / v**2
    if family == "mixed":
        v = v + spec.read_sigma**2
        if np.any(v <= 0.0):
            raise ValueError("mixed Fisher needs positive variance everywhere")
        return 1.0 / v + 0.5 / v**2, -1.0 / v**2 - 1.0 / v**3
    raise ValueError(f"unknown Fisher family {family!r}")


def fisher(
    config: OpticalConfig,
    mask: PhaseMask,
    theta: Emitter,
    spec: CrlbEvalSpec,
    family: str = "poisson",
    steps_um=DEFAULT_STEPS_UM,
) -> FisherMatrix:
    """Single-channel Fisher matrix at theta, scaled to spec.signal_photons.

    theta contributes the position only; the photon budget and background
    come from the evaluation spec.
    """
    scaled = Emitter(theta.x_um, theta.y_um, theta.z_um, spec.signal_photons)
    derivs = psf_derivatives(config, mask, scaled, spec.window_px, steps_um)
    center = _render(config, mask, scaled.x_um, scaled.y_um, scaled.z_um, spec.signal_photons, spec.window_px)[0]
    r, _ = _weights(center, spec, family)
    d = [img.pixels for img in derivs]
    m = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            m[i, j] = m[j, i] = float(np.sum(d[i] * d[j] * r))
    return FisherMatrix(m)


def derivative_consistency(
    config: OpticalConfig,
    mask: PhaseMask,
    theta: Emitter,
    spec: CrlbEvalSpec,
    family: str = "poisson",
    steps_um=DEFAULT_STEPS_UM,
) -> float:
    """Richardson check: max relative Fisher-entry drift when halving the FD steps."""
    f1 = fisher(config, mask, theta, spec, family, steps_um).m
    f2 = fisher(config, mask, theta, spec, family, tuple(s / 2.0 for s in steps_um)).m
    return float(np.abs(f1 - f2).max() / np.abs(f2).max())


def fisher_joint(f1: FisherMatrix, f2: FisherMatrix) -> FisherMatrix:
    """Information of two independent channels adds elementwise."""
    return FisherMatrix(f1.m + f2.m)


def crlb(f: FisherMatrix, cond_limit: float = 1e12) -> CrlbTriple:
    """Square roots of the inverse-Fisher diagonal; raises when unidentifiable."""
    vals, vecs = np.linalg.eigh(f.m)
    if vals.min() <= 0.0 or vals.max() / vals.min() > cond_limit:
        null = vecs[:, int(np.argmin(vals))]
        axis = AXES[int(np.argmax(np.abs(null)))]
        raise UnidentifiableParameterError(
            f"Fisher matrix is singular along {axis} (null direction {np.round(null, 4)})",
            direction=axis,
        )
    inv = np.linalg.inv(f.m)
    sig = np.sqrt(np.diag(inv))
    return CrlbTriple(*sig)


def crlb_objective(
    config: OpticalConfig,
    mask1: PhaseMask,
    mask2: PhaseMask,
    spec: CrlbEvalSpec,
    family: str = "poisson",
) -> float:
    """Sum over the z grid and over x, y, z of sqrt(joint CRLB)."""
    total = 0.0
    for z in spec.z_grid:
        theta = Emitter(z_um=float(z))
        try:
            joint = fisher_joint(
                fisher(config, mask1, theta, spec, family),
                fisher(config, mask2, theta, spec, family),
            )
            total += float(crlb(joint).as_array().sum())
        except UnidentifiableParameterError as err:
            raise UnidentifiableParameterError(
                f"joint Fisher singular at z={z:.3f} um: {err}", direction=err.direction
            ) from None
    return total


def crlb_curve(
    config: OpticalConfig,
    mask1: PhaseMask,
    mask2: PhaseMask,
    spec: CrlbEvalSpec,
    family: str = "poisson",
    sigma_flag_um: float = 10.0,
):
    """Per-depth sqrt-CRLB triples for each channel alone and for the joint pair.

    Returns a list of dicts (one per z).  A channel whose Fisher is outright
    singular at some depth reports None there; axes whose bound exceeds
    `sigma_flag_um` (far beyond any axial range, i.e. the finite-difference
    floor of a direction the PSF does not encode) are listed in
    ``row[name + "_flags"]`` as unidentifiable.
    """
    rows = []
    for z in spec.z_grid:
        theta = Emitter(z_um=float(z))
        f1 = fisher(config, mask1, theta, spec, family)
        f2 = fisher(config, mask2, theta, spec, family)
        row = {"z_um": float(z)}
        for name, fm in (("ch1", f1), ("ch2", f2), ("joint", fisher_joint(f1, f2))):
            try:
                triple = crlb(fm)
                row[name] = triple
                row[name + "_flags"] = [
                    ax for ax, s in zip(AXES, triple.as_array()) if s > sigma_flag_um
                ]
            except UnidentifiableParameterError as err:
                row[name] = None
                row[name + "_flags"] = [err.direction or "?"]
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Pair optimization.


def _fisher_forward_ctx(config, mask, z, spec, family, steps_um):
    """Forward pass of one (z, channel) Fisher with saved PSF contexts."""
    pts, one_sided = _eval_points(Emitter(z_um=z), steps_um)
    win, ctx = {}, {}
    for name, xyz in pts.items():
        win[name], ctx[name] = _render(config, mask, *xyz, spec.signal_photons, spec.window_px, want_ctx=True)
    dx, dy, dz = steps_um
    if one_sided:
        d_z = (-3.0 * win["c"] + 4.0 * win["z+"] - win["z++"]) / (2.0 * dz)
    else:
        d_z = (win["z+"] - win["z-"]) / (2.0 * dz)
    d = [
        (win["x+"] - win["x-"]) / (2.0 * dx),
        (win["y+"] - win["y-"]) / (2.0 * dy),
        d_z,
    ]
    r, drdv = _weights(win["c"], spec, family)
    m = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            m[i, j] = m[j, i] = float(np.sum(d[i] * d[j] * r))
    return {
        "m": m,
        "d": d,
        "r": r,
        "drdv": drdv,
        "win": win,
        "ctx": ctx,
        "one_sided": one_sided,
        "steps": steps_um,
    }


def _fisher_backward(state, g_f: np.ndarray) -> np.ndarray:
    """Push d(obj)/d(Fisher entries) back to the mask; returns mask gradient."""
    d, r = state["d"], state["r"]
    dx, dy, dz = state["steps"]
    g_d = [2.0 * r * (g_f[i, 0] * d[0] + g_f[i, 1] * d[1] + g_f[i, 2] * d[2]) for i in range(3)]
    g_r = sum(g_f[i, j] * d[i] * d[j] for i in range(3) for j in range(3))
    cot = {
        "x+": g_d[0] / (2.0 * dx),
        "x-": -g_d[0] / (2.0 * dx),
        "y+": g_d[1] / (2.0 * dy),
        "y-": -g_d[1] / (2.0 * dy),
        "c": g_r * state["drdv"],
    }
    if state["one_sided"]:
        cot["z+"] = 2.0 * g_d[2] / dz
        cot["z++"] = -g_d[2] / (2.0 * dz)
        cot["c"] = cot["c"] - 3.0 * g_d[2] / (2.0 * dz)
    else:
        cot["z+"] = g_d[2] / (2.0 * dz)
        cot["z-"] = -g_d[2] / (2.0 * dz)
    grad = None
    for name, g in cot.items():
        piece = _psf_mask_gradient(state["ctx"][name], g)
        grad = piece if grad is None else grad + piece
    return grad


def objective_and_gradients(
    config: OpticalConfig,
    mask1: PhaseMask,
    mask2: PhaseMask,
    spec: CrlbEvalSpec,
    family: str = "poisson",
    tikhonov: float = 1e-9,
    steps_um=DEFAULT_STEPS_UM,
):
    """Objective value plus its gradient w.r.t. both masks (adjoint pass).

    A Tikhonov floor on the Fisher diagonal keeps the inversion defined when
    the iterate wanders near a singular configuration; reported CRLBs
    elsewhere never use the floor.
    """
    total = 0.0
    g1 = np.zeros_like(mask1.values)
    g2 = np.zeros_like(mask2.values)
    for z in spec.z_grid:
        states = [
            _fisher_forward_ctx(config, m, float(z), spec, family, steps_um)
            for m in (mask1, mask2)
        ]
        f_tot = states[0]["m"] + states[1]["m"] + tikhonov * np.eye(3)
        v = np.linalg.inv(f_tot)
        sig = np.sqrt(np.diag(v))
        total += float(sig.sum())
        # d(sum_i sqrt(V_ii))/dF = -1/2 sum_i outer(V[:,i], V[:,i]) / sig_i
        g_f = -0.5 * sum(np.outer(v[:, i], v[:, i]) / sig[i] for i in range(3))
        g1 += _fisher_backward(states[0], g_f)
        g2 += _fisher_backward(states[1], g_f)
    return total, g1, g2


def seeded_initial_pair(
    config: OpticalConfig,
    grid: PupilGrid,
    seed: int = 0,
    noise_std_rad: float = 0.3,
    astig_rad: float = 1.0,
):
    """Smooth low-pass random phases plus opposite astigmatism seeds.

    The astigmatism term (rho^2 cos 2 phi, opposite sign per channel) breaks
    the z-symmetry of the flat mask, whose on-axis Fisher is singular in z.
    """
    rng = np.random.default_rng(seed)
    cutoff = config.aperture_cutoff
    astig = astig_rad * (grid.rho / cutoff) ** 2 * np.cos(2.0 * grid.phi) * grid.aperture
    masks = []
    for sign in (1.0, -1.0):
        rough = rng.standard_normal((grid.n, grid.n))
        smooth = gaussian_filter(rough, sigma=grid.n / 16.0, mode="wrap")
        inside = grid.aperture > 0
        std = smooth[inside].std()
        if std > 0:
            smooth = smooth * (noise_std_rad / std)
        masks.append(PhaseMask((smooth + sign * astig) * grid.aperture, grid))
    return masks[0], masks[1]


def optimize_pair(
    config: OpticalConfig,
    init1: PhaseMask | None,
    init2: PhaseMask | None,
    spec: CrlbEvalSpec,
    iterations: int = 200,
    lr: float = 5e-3,
    seed: int = 0,
    family: str = "poisson",
    tikhonov: float = 1e-9,
    grid: PupilGrid | None = None,
):
    """Jointly minimize the summed sqrt-CRLB objective over both masks.

    Returns (mask1, mask2, trace) where trace lists the per-iteration
    objective (Tikhonov-floored).  The best-objective iterate is returned.
    When inits are omitted they come from `seeded_initial_pair(seed)`.
    """
    if init1 is None or init2 is None:
        if grid is None:
            raise ValueError("grid is required when inits are omitted")
        init1, init2 = seeded_initial_pair(config, grid, seed)
    v1, v2 = init1.values.copy(), init2.values.copy()
    grid = init1.grid
    adam1, adam2 = AdamState(step_size=lr), AdamState(step_size=lr)

    obj, g1, g2 = objective_and_gradients(config, init1, init2, spec, family, tikhonov)
    trace = [obj]
    best = (obj, v1.copy(), v2.copy())
    for _ in range(iterations):
        v1 = adam1.step(v1, g1)
        v2 = adam2.step(v2, g2)
        obj, g1, g2 = objective_and_gradients(
            config, PhaseMask(v1, grid), PhaseMask(v2, grid), spec, family, tikhonov
        )
        trace.append(obj)
        if obj < best[0]:
            best = (obj, v1.copy(), v2.copy())
    return PhaseMask(best[1], grid), PhaseMask(best[2], grid), trace
