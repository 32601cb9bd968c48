"""File formats: raw float32 arrays with JSON sidecars, CSV tables, checksums.

Masks and images are stored as little-endian 32-bit float raw arrays in C
order.  The sidecar carries the metadata needed to reinterpret the bytes and,
for masks, to cross-check the optical configuration they were designed for.
All JSON is written with sorted keys so outputs are byte-reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .optics import Image, OpticalConfig, PhaseMask, make_pupil_grid

__all__ = [
    "sidecar_path",
    "write_json",
    "read_json",
    "sha256_file",
    "save_mask",
    "load_mask",
    "save_image",
    "load_image",
    "write_locs_csv",
    "read_locs_csv",
    "write_labels_csv",
    "read_labels_csv",
]

LOC_COLUMNS = ["frame", "x_um", "y_um", "z_um", "photons", "confidence"]
LABEL_COLUMNS = ["example_id", "x_um", "y_um", "z_um", "photons"]


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json") if path.suffix else path.with_name(path.name + ".json")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _save_f32(path, array: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _load_f32(path, shape) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    return data.reshape(shape).astype(float)


def save_mask(path, mask: PhaseMask, config: OpticalConfig) -> None:
    _save_f32(path, mask.values)
    write_json(
        sidecar_path(path),
        {
            "n": mask.grid.n,
            "fft_pad": mask.grid.fft_pad,
            "wavelength_um": config.wavelength_um,
            "na": config.na,
            "n_immersion": config.n_immersion,
            "n_sample": config.n_sample,
        },
    )


def load_mask(path, config: OpticalConfig) -> PhaseMask:
    """Load a mask and rebuild its pupil grid; the sidecar must match config."""
    meta = read_json(sidecar_path(path))
    for key in ("wavelength_um", "na", "n_immersion", "n_sample"):
        if abs(meta[key] - getattr(config, key)) > 1e-9:
            raise ValueError(f"mask sidecar {key}={meta[key]} does not match config {getattr(config, key)}")
    grid = make_pupil_grid(config, n=int(meta["n"]), fft_pad=int(meta["fft_pad"]))
    return PhaseMask(_load_f32(path, (grid.n, grid.n)), grid)


def save_image(path, image: Image) -> None:
    _save_f32(path, image.pixels)
    write_json(sidecar_path(path), {"pitch_um": image.pitch_um, "shape": list(image.pixels.shape)})


def load_image(path) -> Image:
    meta = read_json(sidecar_path(path))
    return Image(_load_f32(path, tuple(meta["shape"])), float(meta["pitch_um"]))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])


def write_locs_csv(path, locs) -> None:
    """locs: iterable of objects with frame, x_um, y_um, z_um, photons, confidence."""
    _write_csv(
        path,
        LOC_COLUMNS,
        [(int(l.frame), l.x_um, l.y_um, l.z_um, l.photons, l.confidence) for l in locs],
    )


def read_locs_csv(path) -> np.ndarray:
    """Returns an array with columns frame, x_um, y_um, z_um, photons, confidence."""
    return _read_table(path, LOC_COLUMNS)


def write_labels_csv(path, rows) -> None:
    """rows: iterable of (example_id, x_um, y_um, z_um, photons)."""
    _write_csv(path, LABEL_COLUMNS, rows)


def read_labels_csv(path) -> np.ndarray:
    return _read_table(path, LABEL_COLUMNS)


def _read_table(path, columns) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != columns:
            raise ValueError(f"{path}: expected columns {columns}, found {header}")
        rows = [[float(v) for v in row] for row in reader]
    return np.array(rows, dtype=float).reshape(-1, len(columns))
