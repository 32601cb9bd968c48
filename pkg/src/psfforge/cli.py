"""Batch command-line front-end tying the toolkit into reproducible pipelines.

Every subcommand resolves a JSON config (strict: unknown keys are rejected),
derives all randomness from explicit seeds, and writes a manifest recording
the resolved config, input checksums and output names, so reruns with the
same config and seed reproduce outputs byte for byte.

Exit codes: 0 success, 2 invalid config or arguments, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import serialization as ser
from .calibrate import AffineTransform, estimate_affine_ransac, warp_image
from .crlb import CrlbEvalSpec, crlb_curve, optimize_pair, seeded_initial_pair
from .edof import design_edof
from .errors import ConfigError, PsfForgeError
from .evalmatch import jaccard, match_hungarian, rmse
from .localize import RecoveryGrid, build_template_bank, localize_pair
from .noise import NoiseParams, sample_measurement
from .optics import Image, OpticalConfig, make_pupil_grid
from .parallel import det_map, resolve_threads
from .scene import DatasetParams, ImagePair, Scene, SuperGaussian, generate_dataset, render_scene, sample_scene, super_gaussian_background
from .tracking import Track, ensemble_msd, link_dbscan, msd


@dataclass(frozen=True)
class GridParams:
    n: int = 256
    fft_pad: int = 1
    window_px: int = 121


@dataclass(frozen=True)
class EvalParams:
    z_range_um: float = 4.0
    z_step_um: float = 0.25
    signal_photons: float = 2000.0
    background_per_px: float = 15.0
    read_sigma: float = 0.0
    window_px: int = 121

    def to_spec(self) -> CrlbEvalSpec:
        return CrlbEvalSpec.over_range(
            self.z_range_um,
            self.z_step_um,
            signal_photons=self.signal_photons,
            background_per_px=self.background_per_px,
            read_sigma=self.read_sigma,
            window_px=self.window_px,
        )


@dataclass(frozen=True)
class RunConfig:
    optical: OpticalConfig = field(default_factory=OpticalConfig)
    grid: GridParams = field(default_factory=GridParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    eval: EvalParams = field(default_factory=EvalParams)
    seed: int = 0


def _build_section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {where}: {err}") from None


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    data = ser.read_json(path)
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    sections = {"optical": OpticalConfig, "grid": GridParams, "noise": NoiseParams, "eval": EvalParams}
    unknown = set(data) - set(sections) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {name: _build_section(cls, data[name], name) for name, cls in sections.items() if name in data}
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    return RunConfig(**kwargs)


def _config_dict(cfg: RunConfig) -> dict:
    def as_dict(obj):
        return {f.name: getattr(obj, f.name) for f in fields(obj)}

    return {
        "optical": as_dict(cfg.optical),
        "grid": as_dict(cfg.grid),
        "noise": as_dict(cfg.noise),
        "eval": as_dict(cfg.eval),
        "seed": cfg.seed,
    }


def _write_manifest(out_dir, subcommand, cfg, args_dict, inputs, outputs, name="manifest.json"):
    # inputs are recorded by basename so identical pipelines rooted in
    # different directories produce identical manifests
    checksums = {}
    for p in inputs:
        key = Path(p).name
        while key in checksums:
            key += "+"
        checksums[key] = ser.sha256_file(p)
    manifest = {
        "tool": "psfforge",
        "version": __version__,
        "subcommand": subcommand,
        "config": _config_dict(cfg),
        "args": {k: v for k, v in sorted(args_dict.items())},
        "inputs": checksums,
        "outputs": sorted(str(o) for o in outputs),
    }
    ser.write_json(Path(out_dir) / name, manifest)


def _csv_writer_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])


def _load_masks(cfg: RunConfig, path1, path2):
    return ser.load_mask(path1, cfg.optical), ser.load_mask(path2, cfg.optical)


# ---------------------------------------------------------------------------
# subcommands


def cmd_design_edof(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    slices = None if args.slices == "all" else int(args.slices)
    mask, trace = design_edof(
        cfg.optical,
        args.range_um,
        n=cfg.grid.n,
        fft_pad=cfg.grid.fft_pad,
        window_px=cfg.grid.window_px if cfg.grid.window_px > 0 else None,
        iterations=args.iters,
        lr=args.lr,
        seed=seed,
        slices_per_step=slices,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ser.save_mask(out, mask, cfg.optical)
    trace_path = out.parent / (out.stem + "_trace.csv")
    _csv_writer_rows(trace_path, ["iteration", "loss"], trace)
    _write_manifest(
        out.parent,
        "design-edof",
        cfg,
        {"range_um": args.range_um, "iters": args.iters, "lr": args.lr, "seed": seed, "slices": args.slices},
        [],
        [out.name, trace_path.name, ser.sidecar_path(out).name],
    )
    return 0


def cmd_design_crlb_pair(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    grid = make_pupil_grid(cfg.optical, cfg.grid.n, cfg.grid.fft_pad)
    spec = replace(cfg.eval, z_range_um=args.range_um).to_spec()
    init1, init2 = seeded_initial_pair(cfg.optical, grid, seed)
    mask1, mask2, trace = optimize_pair(
        cfg.optical, init1, init2, spec, iterations=args.iters, lr=args.lr, seed=seed
    )
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    p1 = prefix.with_name(prefix.name + "1.f32")
    p2 = prefix.with_name(prefix.name + "2.f32")
    ser.save_mask(p1, mask1, cfg.optical)
    ser.save_mask(p2, mask2, cfg.optical)
    trace_path = prefix.with_name(prefix.name + "_trace.csv")
    _csv_writer_rows(trace_path, ["iteration", "objective_um"], list(enumerate(trace)))
    _write_manifest(
        prefix.parent,
        "design-crlb-pair",
        cfg,
        {"range_um": args.range_um, "iters": args.iters, "lr": args.lr, "seed": seed},
        [],
        [p1.name, p2.name, trace_path.name],
    )
    return 0


def cmd_crlb(args, cfg: RunConfig) -> int:
    mask1, mask2 = _load_masks(cfg, args.mask1, args.mask2)
    spec = replace(cfg.eval, z_range_um=args.range_um, z_step_um=args.step_um).to_spec()
    rows = crlb_curve(cfg.optical, mask1, mask2, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["z_um"]
    for ch in ("ch1", "ch2", "joint"):
        header += [f"{ch}_sigma_x_um", f"{ch}_sigma_y_um", f"{ch}_sigma_z_um", f"{ch}_flags"]
    table = []
    for row in rows:
        rec = [row["z_um"]]
        for ch in ("ch1", "ch2", "joint"):
            triple = row[ch]
            flags = row[ch + "_flags"]
            if triple is None:
                rec += ["nan", "nan", "nan", "+".join(flags) or "singular"]
            else:
                rec += [triple.sigma_x, triple.sigma_y, triple.sigma_z, "+".join(flags)]
        table.append(rec)
    _csv_writer_rows(out, header, table)
    _write_manifest(
        out.parent,
        "crlb",
        cfg,
        {"range_um": args.range_um, "step_um": args.step_um},
        [args.mask1, args.mask2],
        [out.name],
    )
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    masks = _load_masks(cfg, args.mask1, args.mask2)
    params = DatasetParams(
        density_per_um2=args.density,
        fov_um=args.fov_um,
        z_range_um=(args.z_lo, args.z_hi),
        photons_range=(args.photons_lo, args.photons_hi),
        background=SuperGaussian(a2=args.bg),
        train_fraction=args.train_fraction,
    )
    generate_dataset(cfg.optical, masks, args.n, params, cfg.noise, args.out_dir, seed=seed)
    # the dataset's own manifest.json lives in out_dir; the run manifest keeps
    # the CLI-level record separate
    _write_manifest(
        args.out_dir,
        "simulate",
        cfg,
        {
            "n": args.n,
            "density": args.density,
            "fov_um": args.fov_um,
            "z_range_um": [args.z_lo, args.z_hi],
            "photons_range": [args.photons_lo, args.photons_hi],
            "bg": args.bg,
            "seed": seed,
        },
        [args.mask1, args.mask2],
        ["labels.csv", "manifest.json"],
        name="run_manifest.json",
    )
    return 0


def _bank_from_args(args, cfg):
    masks = _load_masks(cfg, args.mask1, args.mask2)
    bank = build_template_bank(
        cfg.optical,
        masks[0],
        masks[1],
        z_step_um=args.z_step_um,
        range_um=args.range_um,
        window_px=args.bank_window_px,
    )
    return masks, bank


def cmd_localize(args, cfg: RunConfig) -> int:
    masks, bank = _bank_from_args(args, cfg)
    img1 = ser.load_image(args.image1)
    img2 = ser.load_image(args.image2)
    pair = ImagePair(img1, img2)
    locs = localize_pair(
        pair,
        bank,
        cfg.optical,
        masks,
        cfg.noise,
        threshold=args.threshold,
        radius_um=args.radius_um,
        refine=not args.no_refine,
        background=args.bg,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ser.write_locs_csv(out, locs)
    _write_manifest(
        out.parent,
        "localize",
        cfg,
        {
            "threshold": args.threshold,
            "radius_um": args.radius_um,
            "z_step_um": args.z_step_um,
            "range_um": args.range_um,
            "bg": args.bg,
            "refine": not args.no_refine,
        },
        [args.image1, args.image2, args.mask1, args.mask2],
        [out.name],
    )
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    pred = ser.read_locs_csv(args.pred)
    gt = ser.read_labels_csv(args.gt)
    threshold_um = args.threshold_nm / 1000.0
    frames = sorted(set(pred[:, 0].astype(int)) | set(gt[:, 0].astype(int)))
    n_tp = n_fp = n_fn = 0
    lat_sq: list[float] = []
    ax_sq: list[float] = []
    for f in frames:
        p = pred[pred[:, 0] == f][:, 1:4]
        g = gt[gt[:, 0].astype(int) == f][:, 1:4]
        m = match_hungarian(p, g, threshold_um)
        n_tp += m.n_tp
        n_fp += m.n_fp
        n_fn += m.n_fn
        lat_sq.extend(m.lateral_errors**2)
        ax_sq.extend(m.axial_errors**2)
    denom = n_tp + n_fp + n_fn
    metrics = {
        "jaccard": 1.0 if denom == 0 else n_tp / denom,
        "rmse_lateral_nm": float(np.sqrt(np.mean(lat_sq)) * 1e3) if lat_sq else None,
        "rmse_axial_nm": float(np.sqrt(np.mean(ax_sq)) * 1e3) if ax_sq else None,
        "n_tp": n_tp,
        "n_fp": n_fp,
        "n_fn": n_fn,
        "threshold_nm": args.threshold_nm,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ser.write_json(out, metrics)
    _write_manifest(
        out.parent,
        "evaluate",
        cfg,
        {"threshold_nm": args.threshold_nm},
        [args.pred, args.gt],
        [out.name],
    )
    return 0


def cmd_register(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    locs1 = ser.read_locs_csv(args.locs1)
    locs2 = ser.read_locs_csv(args.locs2)
    if len(locs1) != len(locs2):
        raise ConfigError("register expects row-paired localization files")
    transform, inliers = estimate_affine_ransac(
        locs1[:, 1:3], locs2[:, 1:3], iters=args.iters, inlier_um=args.inlier_um, seed=seed
    )
    resid = np.linalg.norm(transform.apply(locs2[:, 1:3]) - locs1[:, 1:3], axis=1)
    rms = float(np.sqrt(np.mean(resid[inliers] ** 2)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ser.write_json(out, transform.to_dict(inliers=int(inliers.sum()), rms_um=rms))
    _write_manifest(
        out.parent,
        "register",
        cfg,
        {"iters": args.iters, "inlier_um": args.inlier_um, "seed": seed},
        [args.locs1, args.locs2],
        [out.name],
    )
    return 0


def cmd_warp(args, cfg: RunConfig) -> int:
    img = ser.load_image(args.image)
    transform = AffineTransform.from_dict(ser.read_json(args.transform))
    warped, valid = warp_image(img, transform)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ser.save_image(out, warped)
    valid_path = out.parent / (out.stem + "_valid.f32")
    ser.save_image(valid_path, Image(valid.astype(float), img.pitch_um))
    _write_manifest(
        out.parent, "warp", cfg, {}, [args.image, args.transform], [out.name, valid_path.name]
    )
    return 0


def cmd_track(args, cfg: RunConfig) -> int:
    locs = ser.read_locs_csv(args.locs)
    tracks, noise_idx = link_dbscan(locs[:, :4], eps_um=args.eps_um, min_pts=args.min_pts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in tracks:
        for frame, x, y, z in t.points:
            rows.append([t.id, int(frame), x, y, z])
    _csv_writer_rows(out, ["track_id", "frame", "x_um", "y_um", "z_um"], rows)
    _write_manifest(
        out.parent,
        "track",
        cfg,
        {"eps_um": args.eps_um, "min_pts": args.min_pts, "n_tracks": len(tracks), "n_noise": int(len(noise_idx))},
        [args.locs],
        [out.name],
    )
    return 0


def cmd_msd(args, cfg: RunConfig) -> int:
    with open(args.tracks, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["track_id", "frame", "x_um", "y_um", "z_um"]:
            raise ConfigError(f"unexpected tracks columns: {header}")
        data = np.array([[float(v) for v in row] for row in reader])
    tracks = []
    if len(data):
        for tid in sorted(set(data[:, 0].astype(int))):
            pts = data[data[:, 0] == tid][:, 1:5]
            tracks.append(Track(tid, pts[np.argsort(pts[:, 0])]))
    rows = []
    for t in tracks:
        for lag, val in msd(t, args.max_lag):
            rows.append([str(t.id), int(lag), val])
    if tracks:
        for lag, val in ensemble_msd(tracks, args.max_lag):
            rows.append(["ensemble", int(lag), val])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _csv_writer_rows(out, ["track_id", "lag", "msd_um2"], rows)
    _write_manifest(out.parent, "msd", cfg, {"max_lag": args.max_lag}, [args.tracks], [out.name])
    return 0


def cmd_sweep_density(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    masks, bank = _bank_from_args(args, cfg)
    densities = [float(d) for d in args.densities.split(",") if d]
    threads = resolve_threads(args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_frame(task):
        di, density, i = task
        scene = sample_scene(
            density,
            args.fov_um,
            (args.z_lo, args.z_hi),
            (args.photons, args.photons),
            seed=[seed, di, i],
            background=SuperGaussian(a2=args.bg),
        )
        window_px = int(round(args.fov_um / masks[0].grid.pitch_um))
        pair = render_scene(cfg.optical, masks[0], masks[1], scene, window_px)
        bg = super_gaussian_background(scene.background, pair.ch1.pixels.shape)
        noisy = ImagePair(
            sample_measurement(pair.ch1, bg, cfg.noise, seed=[seed, di, i, 1]),
            sample_measurement(pair.ch2, bg, cfg.noise, seed=[seed, di, i, 2]),
        )
        locs = localize_pair(
            noisy,
            bank,
            cfg.optical,
            masks,
            cfg.noise,
            threshold=args.threshold,
            radius_um=args.radius_um,
            background=args.bg,
            frame=i,
        )
        m = match_hungarian(locs, scene.emitters, args.threshold_nm / 1000.0)
        return m

    rows = []
    for di, density in enumerate(densities):
        matches = det_map(run_frame, [(di, density, i) for i in range(args.n_per_point)], threads)
        n_tp = sum(m.n_tp for m in matches)
        n_fp = sum(m.n_fp for m in matches)
        n_fn = sum(m.n_fn for m in matches)
        lat = np.concatenate([m.lateral_errors for m in matches]) if matches else np.empty(0)
        ax = np.concatenate([m.axial_errors for m in matches]) if matches else np.empty(0)
        denom = n_tp + n_fp + n_fn
        rows.append(
            [
                density,
                1.0 if denom == 0 else n_tp / denom,
                float(np.sqrt(np.mean(lat**2)) * 1e3) if len(lat) else float("nan"),
                float(np.sqrt(np.mean(ax**2)) * 1e3) if len(ax) else float("nan"),
                n_tp,
                n_fp,
                n_fn,
            ]
        )
    out = out_dir / "sweep.csv"
    _csv_writer_rows(
        out,
        ["density_per_um2", "jaccard", "rmse_lateral_nm", "rmse_axial_nm", "n_tp", "n_fp", "n_fn"],
        rows,
    )
    _write_manifest(
        out_dir,
        "sweep-density",
        cfg,
        {
            "densities": densities,
            "n_per_point": args.n_per_point,
            "fov_um": args.fov_um,
            "photons": args.photons,
            "bg": args.bg,
            "z_range_um": [args.z_lo, args.z_hi],
            "threshold": args.threshold,
            "threshold_nm": args.threshold_nm,
            "seed": seed,
        },
        [args.mask1, args.mask2],
        [out.name],
    )
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(sub):
    sub.add_argument("--config", default=None, help="JSON run configuration")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--threads", type=int, default=None, help="parallel worker cap")


def _add_bank_args(sub):
    sub.add_argument("--mask1", required=True)
    sub.add_argument("--mask2", required=True)
    sub.add_argument("--range-um", type=float, required=True, dest="range_um")
    sub.add_argument("--z-step-um", type=float, default=0.1, dest="z_step_um")
    sub.add_argument("--bank-window-px", type=int, default=None, dest="bank_window_px")
    sub.add_argument("--threshold", type=float, default=80.0)
    sub.add_argument("--radius-um", type=float, default=0.1, dest="radius_um")
    sub.add_argument("--bg", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psfforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"psfforge {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("design-edof", help="design an extended-depth-of-field mask")
    _add_common(p)
    p.add_argument("--range-um", type=float, required=True, dest="range_um")
    p.add_argument("--iters", type=int, default=400)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--slices", default="3", help="slices per step, or 'all'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_design_edof)

    p = subs.add_parser("design-crlb-pair", help="optimize a CRLB-minimal mask pair")
    _add_common(p)
    p.add_argument("--range-um", type=float, required=True, dest="range_um")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--out-prefix", required=True, dest="out_prefix")
    p.set_defaults(func=cmd_design_crlb_pair)

    p = subs.add_parser("crlb", help="per-depth precision bounds for a mask pair")
    _add_common(p)
    p.add_argument("--mask1", required=True)
    p.add_argument("--mask2", required=True)
    p.add_argument("--range-um", type=float, required=True, dest="range_um")
    p.add_argument("--step-um", type=float, default=0.25, dest="step_um")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crlb)

    p = subs.add_parser("simulate", help="generate a labeled dual-channel dataset")
    _add_common(p)
    p.add_argument("--mask1", required=True)
    p.add_argument("--mask2", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--fov-um", type=float, default=12.0, dest="fov_um")
    p.add_argument("--z-lo", type=float, default=0.0, dest="z_lo")
    p.add_argument("--z-hi", type=float, default=4.0, dest="z_hi")
    p.add_argument("--photons-lo", type=float, default=10000.0, dest="photons_lo")
    p.add_argument("--photons-hi", type=float, default=20000.0, dest="photons_hi")
    p.add_argument("--bg", type=float, default=500.0)
    p.add_argument("--train-fraction", type=float, default=0.9, dest="train_fraction")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("localize", help="run the baseline localizer on one image pair")
    _add_common(p)
    _add_bank_args(p)
    p.add_argument("--image1", required=True)
    p.add_argument("--image2", required=True)
    p.add_argument("--no-refine", action="store_true", dest="no_refine")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = subs.add_parser("evaluate", help="match predictions to ground truth and report metrics")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold-nm", type=float, default=100.0, dest="threshold_nm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("register", help="estimate the channel-2 to channel-1 affine map")
    _add_common(p)
    p.add_argument("--locs1", required=True)
    p.add_argument("--locs2", required=True)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--inlier-um", type=float, default=0.22, dest="inlier_um")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_register)

    p = subs.add_parser("warp", help="warp an image through an affine transform")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--transform", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_warp)

    p = subs.add_parser("track", help="link localizations into tracks by clustering")
    _add_common(p)
    p.add_argument("--locs", required=True)
    p.add_argument("--eps-um", type=float, default=0.25, dest="eps_um")
    p.add_argument("--min-pts", type=int, default=25, dest="min_pts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = subs.add_parser("msd", help="per-track and ensemble mean-square displacement")
    _add_common(p)
    p.add_argument("--tracks", required=True)
    p.add_argument("--max-lag", type=int, default=20, dest="max_lag")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_msd)

    p = subs.add_parser("sweep-density", help="Jaccard/RMSE versus emitter density")
    _add_common(p)
    _add_bank_args(p)
    p.add_argument("--densities", required=True, help="comma-separated densities per um^2")
    p.add_argument("--n-per-point", type=int, default=100, dest="n_per_point")
    p.add_argument("--fov-um", type=float, default=12.0, dest="fov_um")
    p.add_argument("--photons", type=float, default=15000.0)
    p.add_argument("--z-lo", type=float, default=0.25, dest="z_lo")
    p.add_argument("--z-hi", type=float, default=1.75, dest="z_hi")
    p.add_argument("--threshold-nm", type=float, default=100.0, dest="threshold_nm")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_sweep_density)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as err:
        print(f"psfforge: config error: {err}", file=sys.stderr)
        return 2
    except PsfForgeError as err:
        print(f"psfforge [{type(err).__module__}.{type(err).__name__}]: {err}", file=sys.stderr)
        return 3
    except (ValueError, OSError, np.linalg.LinAlgError) as err:
        print(f"psfforge [{type(err).__module__}]: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
