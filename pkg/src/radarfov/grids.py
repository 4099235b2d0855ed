"""Polar BEV grid geometry shared by label generation, simulation and eval.

The working grid is 128x128: rows index range 0..12 m (row 0 nearest the
sensor), columns index azimuth -45..+45 deg (column 0 leftmost). Images
derived from these grids therefore show the sensor at the top unless
flipped vertically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PolarGrid:
    """Range/azimuth cell layout of the BEV occupancy and label grids."""

    num_range: int = 128
    num_azimuth: int = 128
    max_range: float = 12.0
    az_min_deg: float = -45.0
    az_max_deg: float = 45.0

    def __post_init__(self):
        if self.num_range < 1 or self.num_azimuth < 1:
            raise ValueError("grid extents must be >= 1")
        if self.max_range <= 0 or self.az_max_deg <= self.az_min_deg:
            raise ValueError("degenerate grid geometry")

    @property
    def range_bin_size(self) -> float:
        return self.max_range / self.num_range

    @property
    def az_bin_size(self) -> float:
        return (self.az_max_deg - self.az_min_deg) / self.num_azimuth

    def range_bin(self, r):
        """Row index for range(s) in meters, clamped to the grid."""
        idx = np.floor(np.asarray(r, dtype=float) / self.range_bin_size).astype(int)
        return np.clip(idx, 0, self.num_range - 1)

    def azimuth_bin(self, az_deg):
        """Column index for azimuth(s) in degrees, clamped to the grid."""
        idx = np.floor(
            (np.asarray(az_deg, dtype=float) - self.az_min_deg) / self.az_bin_size
        ).astype(int)
        return np.clip(idx, 0, self.num_azimuth - 1)

    def azimuth_centers_deg(self) -> np.ndarray:
        j = np.arange(self.num_azimuth)
        return self.az_min_deg + (j + 0.5) * self.az_bin_size

    def range_centers(self) -> np.ndarray:
        i = np.arange(self.num_range)
        return (i + 0.5) * self.range_bin_size

    def counts(self, polar_points: np.ndarray) -> np.ndarray:
        """Per-cell point counts for an (N, 2) array of (range_m, az_deg).

        Points outside the grid are clamped onto the border cells; callers
        that want to discard out-of-FoV points must do so beforehand.
        """
        pts = np.asarray(polar_points, dtype=float)
        out = np.zeros((self.num_range, self.num_azimuth), dtype=np.int64)
        if pts.size == 0:
            return out
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("expected an (N, 2) array of (range, azimuth)")
        ri = self.range_bin(pts[:, 0])
        ai = self.azimuth_bin(pts[:, 1])
        np.add.at(out, (ri, ai), 1)
        return out
