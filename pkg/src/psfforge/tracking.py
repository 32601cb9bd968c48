"""Track linking by density-based clustering and mean-square-displacement curves.

Localizations pooled over all frames are clustered directly on their 3D
positions (DBSCAN, eps = 0.25 um, minPts = 25 by default); each cluster
becomes one track ordered by frame.  This is valid for spatially compact,
non-crossing trajectories; a guard rejects clusters that look like merged
particles (many frames with duplicate points) and recommends a proper
frame-linking tracker for those.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import DBSCAN

__all__ = ["Track", "link_dbscan", "msd", "ensemble_msd"]


@dataclass(eq=False)
class Track:
    """Time-ordered trajectory; points has columns (frame, x_um, y_um, z_um)."""

    id: int
    points: np.ndarray
    n_missing: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 4)
        frames = self.points[:, 0]
        if len(frames) > 1 and not np.all(np.diff(frames) > 0):
            raise ValueError("track frames must be strictly increasing")


def _as_frame_points(locs) -> np.ndarray:
    if isinstance(locs, np.ndarray):
        return np.asarray(locs, dtype=float).reshape(-1, 4)
    return np.array([(l.frame, l.x_um, l.y_um, l.z_um) for l in locs], dtype=float).reshape(-1, 4)


def link_dbscan(locs, eps_um: float = 0.25, min_pts: int = 25, max_duplicate_rate: float = 0.05):
    """Cluster pooled 3D positions into tracks; returns (tracks, noise indices).

    min_pts counts the point itself.  Within a cluster, several points in one
    frame are resolved to the one nearest the cluster's 3D median; clusters
    where that happens in more than `max_duplicate_rate` of their points are
    rejected to noise (they indicate crossing particles that need an actual
    frame-linking tracker).  Track ids are assigned by (first frame, centroid)
    so the result is independent of input order.
    """
    if eps_um <= 0.0:
        raise ValueError("eps_um must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    data = _as_frame_points(locs)
    if len(data) == 0:
        return [], np.empty(0, dtype=int)
    labels = DBSCAN(eps=eps_um, min_samples=min_pts).fit_predict(data[:, 1:])

    noise = list(np.flatnonzero(labels == -1))
    clusters = []
    for lab in sorted(set(labels) - {-1}):
        idx = np.flatnonzero(labels == lab)
        pts = data[idx]
        median = np.median(pts[:, 1:], axis=0)
        frames, counts = np.unique(pts[:, 0], return_counts=True)
        n_dup = int(counts.sum() - len(frames))
        if n_dup > max_duplicate_rate * len(pts):
            warnings.warn(
                f"cluster with {n_dup}/{len(pts)} duplicate-frame points rejected; "
                "use a frame-linking tracker for crossing particles"
            )
            noise.extend(idx)
            continue
        rows = []
        for f in frames:
            sel = idx[pts[:, 0] == f]
            if len(sel) > 1:
                d = np.linalg.norm(data[sel][:, 1:] - median, axis=1)
                keep = sel[int(np.argmin(d))]
                noise.extend(s for s in sel if s != keep)
            else:
                keep = sel[0]
            rows.append(data[keep])
        points = np.array(rows)
        span = int(points[-1, 0] - points[0, 0]) + 1
        clusters.append((points[0, 0], tuple(median), points, span - len(points)))

    clusters.sort(key=lambda c: (c[0], c[1]))
    tracks = [
        Track(i, points, n_missing) for i, (_, _, points, n_missing) in enumerate(clusters)
    ]
    return tracks, np.array(sorted(noise), dtype=int)


def msd(track: Track, max_lag: int):
    """Mean square displacement vs frame lag; missing frames drop out pairwise.

    Returns an array with columns (lag_frames, msd_um2), including lag 0.
    """
    pts = track.points
    if len(pts) < 2:
        raise ValueError("track must have at least 2 points")
    frames = pts[:, 0].astype(int)
    index = {f: i for i, f in enumerate(frames)}
    rows = [(0, 0.0)]
    for lag in range(1, max_lag + 1):
        sq = [
            float(np.sum((pts[index[f + lag], 1:] - pts[i, 1:]) ** 2))
            for i, f in enumerate(frames)
            if f + lag in index
        ]
        if sq:
            rows.append((lag, float(np.mean(sq))))
    return np.array(rows, dtype=float)


def ensemble_msd(tracks, max_lag: int):
    """Displacement-count-weighted average of per-track MSD curves."""
    if len(tracks) == 0:
        raise ValueError("need at least one track")
    sums: dict[int, list] = {}
    for track in tracks:
        pts = track.points
        frames = pts[:, 0].astype(int)
        index = {f: i for i, f in enumerate(frames)}
        for lag in range(1, max_lag + 1):
            for i, f in enumerate(frames):
                if f + lag in index:
                    s = float(np.sum((pts[index[f + lag], 1:] - pts[i, 1:]) ** 2))
                    acc = sums.setdefault(lag, [0.0, 0])
                    acc[0] += s
                    acc[1] += 1
    rows = [(0, 0.0)] + [(lag, s / n) for lag, (s, n) in sorted(sums.items())]
    return np.array(rows, dtype=float)
