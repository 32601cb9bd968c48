"""Shared CLI scenario runner used by the CLI tests and the acceptance suite."""

import hashlib
import json
from pathlib import Path

import numpy as np

from psfforge import serialization as ser
from psfforge.calibrate import AffineTransform
from psfforge.cli import main
from psfforge.localize import Localization
from psfforge.optics import OpticalConfig, PhaseMask, make_pupil_grid

CLI_CONFIG = {
    "optical": {"wavelength_um": 0.605},
    "grid": {"n": 64, "fft_pad": 2, "window_px": 101},
    "noise": {"baseline": 0.0, "read_sigma": 0.0, "mode": "exact-poisson"},
    "eval": {
        "z_range_um": 1.0,
        "z_step_um": 0.5,
        "signal_photons": 2000.0,
        "background_per_px": 15.0,
        "read_sigma": 0.0,
        "window_px": 41,
    },
    "seed": 3,
}


def tree_checksums(root: Path) -> dict:
    return {
        p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(root).rglob("*"))
        if p.is_file()
    }


def prepare_inputs(work: Path):
    """Config file, a mask pair, and register/track input CSVs."""
    work.mkdir(parents=True, exist_ok=True)
    config_path = work / "config.json"
    config_path.write_text(json.dumps(CLI_CONFIG, sort_keys=True))

    cfg = OpticalConfig()
    grid = make_pupil_grid(cfg, n=64, fft_pad=2)
    rng = np.random.default_rng(12)
    m1 = PhaseMask(rng.normal(0.0, 0.4, (64, 64)) * grid.aperture, grid)
    m2 = PhaseMask(rng.normal(0.0, 0.4, (64, 64)) * grid.aperture, grid)
    ser.save_mask(work / "m1.f32", m1, cfg)
    ser.save_mask(work / "m2.f32", m2, cfg)

    true_t = AffineTransform(np.array([[1.01, 0.02], [-0.01, 0.99]]), np.array([0.3, -0.2]))
    pts2 = rng.uniform(0.0, 20.0, (25, 2))
    pts1 = true_t.apply(pts2)
    ser.write_locs_csv(
        work / "reg1.csv", [Localization(x, y, 0.0, frame=i) for i, (x, y) in enumerate(pts1)]
    )
    ser.write_locs_csv(
        work / "reg2.csv", [Localization(x, y, 0.0, frame=i) for i, (x, y) in enumerate(pts2)]
    )

    track_locs = []
    frame_samples = rng.normal(0.0, 0.02, (2, 60, 3))
    centers = np.array([[2.0, 2.0, 0.5], [4.5, 2.5, 1.0]])
    for e in range(2):
        for f in range(60):
            x, y, z = centers[e] + frame_samples[e, f]
            track_locs.append(Localization(x, y, z, confidence=500.0, frame=f))
    ser.write_locs_csv(work / "track_locs.csv", track_locs)
    return config_path


def run_all_subcommands(work: Path, out: Path) -> dict:
    """Run every CLI subcommand into `out`; returns the output tree checksums.

    Inputs under `work` must exist (see prepare_inputs).  Asserts every exit
    code is 0.
    """
    out.mkdir(parents=True, exist_ok=True)
    config = str(work / "config.json")
    m1, m2 = str(work / "m1.f32"), str(work / "m2.f32")

    def run(argv):
        code = main(argv)
        assert code == 0, f"exit {code} for {argv}"

    run(["design-edof", "--config", config, "--range-um", "1.0", "--iters", "2",
         "--out", str(out / "edof" / "edof.f32")])
    run(["design-crlb-pair", "--config", config, "--range-um", "1.0", "--iters", "2",
         "--out-prefix", str(out / "pair" / "pair")])
    run(["crlb", "--config", config, "--mask1", m1, "--mask2", m2,
         "--range-um", "1.0", "--step-um", "0.5", "--out", str(out / "crlb" / "crlb.csv")])
    run(["simulate", "--config", config, "--mask1", m1, "--mask2", m2, "--n", "2",
         "--density", "0.08", "--fov-um", "6.0", "--z-lo", "0.1", "--z-hi", "0.9",
         "--bg", "100.0", "--out-dir", str(out / "sim")])
    run(["localize", "--config", config, "--mask1", m1, "--mask2", m2,
         "--image1", str(out / "sim" / "images" / "ex00000_ch1.f32"),
         "--image2", str(out / "sim" / "images" / "ex00000_ch2.f32"),
         "--range-um", "1.0", "--z-step-um", "0.25", "--threshold", "400", "--bg", "100.0",
         "--no-refine", "--out", str(out / "loc" / "locs.csv")])
    run(["evaluate", "--config", config, "--pred", str(out / "loc" / "locs.csv"),
         "--gt", str(out / "sim" / "labels.csv"), "--threshold-nm", "250",
         "--out", str(out / "eval" / "metrics.json")])
    run(["register", "--config", config, "--locs1", str(work / "reg1.csv"),
         "--locs2", str(work / "reg2.csv"), "--out", str(out / "reg" / "T.json")])
    run(["warp", "--config", config, "--image", str(out / "sim" / "images" / "ex00000_ch2.f32"),
         "--transform", str(out / "reg" / "T.json"), "--out", str(out / "warp" / "warped.f32")])
    run(["track", "--config", config, "--locs", str(work / "track_locs.csv"),
         "--eps-um", "0.25", "--min-pts", "25", "--out", str(out / "trk" / "tracks.csv")])
    run(["msd", "--config", config, "--tracks", str(out / "trk" / "tracks.csv"),
         "--max-lag", "10", "--out", str(out / "msd" / "msd.csv")])
    run(["sweep-density", "--config", config, "--mask1", m1, "--mask2", m2,
         "--densities", "0.05", "--n-per-point", "2", "--fov-um", "6.0",
         "--photons", "15000", "--z-lo", "0.2", "--z-hi", "0.8", "--bg", "100.0",
         "--range-um", "1.0", "--z-step-um", "0.25", "--threshold", "400",
         "--out-dir", str(out / "sweep")])
    return tree_checksums(out)
