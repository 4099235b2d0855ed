"""Unobstructed-FoV label generation from LiDAR point clouds.

Pipeline per sequence: height/intensity filtering of each frame, strided
accumulation into a global 2D map, per-frame re-projection into the polar
sensor grid, occupancy thresholding on point counts, a spatial-outlier
erosion pass, and finally the per-column free-FoV extraction (everything
strictly nearer than the first occupied cell is free).

Labels and occupancy grids are stored as binary PGM (P5, maxval 255) with
0/255 encoding; row 0 is the nearest range, so rendered images show the
sensor at the top unless flipped.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grids import PolarGrid
from .simworld import LidarFrame, PoseSE3


@dataclass
class FilterParams:
    """Height band (sensor-relative, meters) and intensity floor."""

    z_min: float = 0.2
    z_max: float = 1.8
    intensity_min: float = 0.0

    def __post_init__(self):
        if self.z_min >= self.z_max:
            raise ValueError("z_min must be below z_max")


@dataclass
class QcFlags:
    free_fraction: float
    monotone_ok: bool


def filter_points(frame: LidarFrame, fp: FilterParams) -> LidarFrame:
    """Keep points inside the height band with intensity >= the floor."""
    pts = frame.points
    keep = (pts[:, 2] >= fp.z_min) & (pts[:, 2] <= fp.z_max) \
        & (pts[:, 3] >= fp.intensity_min)
    return LidarFrame(pts[keep])


def accumulate_global(frames, poses, stride: int) -> np.ndarray:
    """Union of every stride-th frame's points in the global frame, z dropped.

    ``frames`` are expected to be already filtered; duplicates are kept.
    Returns an (N, 2) array of global (x, y).
    """
    if not 2 <= stride <= 10:
        raise ValueError(f"stride must be in [2, 10], got {stride}")
    if len(frames) != len(poses):
        raise ValueError("frame/pose count mismatch")
    chunks = []
    for k in range(0, len(frames), stride):
        pts = frames[k].points
        if pts.shape[0] == 0:
            continue
        world = poses[k].to_world(pts[:, :3])
        chunks.append(world[:, :2])
    if not chunks:
        return np.zeros((0, 2))
    return np.concatenate(chunks, axis=0)


def to_polar_ram(cloud: np.ndarray, pose: PoseSE3, grid: PolarGrid | None = None) -> np.ndarray:
    """Project global 2D points into the sensor's polar window.

    Returns (M, 2) (range_m, azimuth_deg) for points inside the grid's
    range/azimuth coverage; everything else is discarded.
    """
    grid = grid or PolarGrid()
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 2)
    if cloud.shape[0] == 0:
        return np.zeros((0, 2))
    local = (cloud - pose.translation[:2]) @ pose.rotation[:2, :2]
    r = np.linalg.norm(local, axis=1)
    az = np.degrees(np.arctan2(local[:, 1], local[:, 0]))
    keep = (r <= grid.max_range) & (az >= grid.az_min_deg) & (az <= grid.az_max_deg)
    return np.column_stack([r[keep], az[keep]])


def rasterize_occupancy(polar_points: np.ndarray, tau: int,
                        grid: PolarGrid | None = None) -> np.ndarray:
    """Occupancy grid: cell = 1 iff it contains at least tau points."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    grid = grid or PolarGrid()
    counts = grid.counts(polar_points)
    return (counts >= tau).astype(np.uint8)


def erode(grid: np.ndarray, iterations: int = 1) -> np.ndarray:
    """3x3 binary erosion; cells beyond the boundary are treated as empty."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    g = np.asarray(grid).astype(bool)
    if iterations == 0:
        return g.astype(np.uint8)
    out = ndimage.binary_erosion(
        g, structure=np.ones((3, 3), dtype=bool), iterations=iterations,
        border_value=0)
    return out.astype(np.uint8)


def fov_label(grid: np.ndarray) -> np.ndarray:
    """Per column: 1 for rows strictly before the first occupied row,
    0 from the first occupied row outward; all 1 when the column is empty."""
    g = np.asarray(grid).astype(bool)
    n_rows = g.shape[0]
    first = np.where(g.any(axis=0), g.argmax(axis=0), n_rows)
    label = (np.arange(n_rows)[:, None] < first[None, :]).astype(np.uint8)
    return label


def label_qc(label: np.ndarray) -> QcFlags:
    """Free-space fraction and per-column outward monotonicity."""
    lab = np.asarray(label).astype(np.int8)
    monotone = bool(np.all(np.diff(lab, axis=0) <= 0))
    return QcFlags(free_fraction=float(lab.mean()), monotone_ok=monotone)


def sequence_labels(frames, poses, fp: FilterParams, stride: int, tau: int,
                    erosion_iterations: int = 1, grid: PolarGrid | None = None):
    """Full per-sequence pipeline; yields (occupancy, label, QcFlags) per frame.

    The global map is assembled once from the filtered, strided frames and
    re-projected at every pose.
    """
    grid = grid or PolarGrid()
    filtered = [filter_points(f, fp) for f in frames]
    cloud = accumulate_global(filtered, poses, stride)
    for pose in poses:
        polar = to_polar_ram(cloud, pose, grid)
        occ = erode(rasterize_occupancy(polar, tau, grid), erosion_iterations)
        label = fov_label(occ)
        yield occ, label, label_qc(label)


# ----------------------------------------------------------------------
# PGM + manifest IO
# ----------------------------------------------------------------------

def write_pgm(path, grid01: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255); input cells in {0, 1} are written 0/255."""
    g = np.asarray(grid01)
    if g.ndim != 2:
        raise ValueError("PGM grids must be 2-D")
    data = (g.astype(np.uint8) * 255)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
    os.replace(tmp, path)


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM into a {0, 1} uint8 grid (threshold at 128)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError("only binary (P5) PGM is supported")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while blob[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    img = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=pos)
    return (img.reshape(height, width) >= 128).astype(np.uint8)


def write_gray_pgm(path, values01: np.ndarray) -> None:
    """Grayscale PGM from float values in [0, 1]."""
    v = np.clip(np.asarray(values01, dtype=np.float64), 0.0, 1.0)
    data = np.round(v * 255).astype(np.uint8)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
    os.replace(tmp, path)


def write_labels_manifest(path, entries: dict) -> None:
    """Map of frame id -> {"label": file, "free_fraction": .., "monotone_ok": ..}."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump({str(k): v for k, v in sorted(entries.items())}, fh, indent=1)
    os.replace(tmp, path)


def read_labels_manifest(path) -> dict:
    with open(path) as fh:
        return {int(k): v for k, v in json.load(fh).items()}
