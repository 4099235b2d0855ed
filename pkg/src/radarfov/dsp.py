"""FMCW radar signal processing: ADC cube -> RD/RA tensors and heatmaps,
CFAR detection, FFT-based direction of arrival, conventional point clouds.

Axis convention for all cubes: [channel, chirp, sample] = [C, L, N].
After the Doppler FFT the chirp axis is center-shifted (zero velocity at
bin L/2); after the angle DFT the channel axis is center-shifted (boresight
at bin C/2).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import fft_axis

C0 = 299_792_458.0  # speed of light, m/s

POINTCLOUD_HEADER = "range_m,azimuth_deg,doppler_mps,power_db"


@dataclass
class RadarConfig:
    """Single-chip TDM-MIMO radar waveform/geometry parameters.

    The chirp slope and chirp interval default to the values implied by the
    range/Doppler resolutions, so that range bin k maps to k*range_res
    meters and Doppler bin L/2+k to k*doppler_res m/s.
    """

    num_channels: int = 12
    num_chirps: int = 128
    num_samples: int = 128
    max_range: float = 12.0
    max_doppler: float = 2.56
    range_res: float = 0.125
    doppler_res: float = 0.04
    carrier_freq: float = 77.0e9
    virtual_spacing: float = 0.5  # element spacing as a fraction of wavelength
    sample_interval: float = 1.0e-7
    chirp_slope: float = field(default=0.0)
    chirp_interval: float = field(default=0.0)

    def __post_init__(self):
        if self.num_channels * self.num_chirps * self.num_samples <= 0:
            raise ValueError("cube dimensions must be positive")
        if self.carrier_freq <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.range_res <= 0 or self.doppler_res <= 0:
            raise ValueError("resolutions must be positive")
        if self.max_range / self.range_res > self.num_samples:
            raise ValueError("max_range exceeds the unambiguous range span")
        if not self.chirp_slope:
            self.chirp_slope = C0 / (
                2.0 * self.range_res * self.sample_interval * self.num_samples
            )
        if not self.chirp_interval:
            self.chirp_interval = self.wavelength / (
                2.0 * self.num_chirps * self.doppler_res
            )

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier_freq


@dataclass
class AdcCube:
    """Raw complex ADC data tied to the config that produced it."""

    config: RadarConfig
    data: np.ndarray  # complex128, [C, L, N]

    def __post_init__(self):
        expected = (
            self.config.num_channels,
            self.config.num_chirps,
            self.config.num_samples,
        )
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.shape != expected:
            raise ValueError(f"ADC cube shape {self.data.shape} != config {expected}")


@dataclass
class CfarParams:
    """Sliding-window CFAR settings (per side counts, linear threshold)."""

    kind: str = "ca"  # ca | go | os
    guard_cells: int = 2
    train_cells: int = 8
    threshold_scale: float = 4.0
    os_rank: int | None = None  # defaults to 3/4 of the total training cells

    def __post_init__(self):
        if self.kind not in ("ca", "go", "os"):
            raise ValueError(f"unknown CFAR kind {self.kind!r}")
        if self.guard_cells < 0 or self.train_cells < 1:
            raise ValueError("guard >= 0 and train >= 1 required")
        if self.threshold_scale <= 0:
            raise ValueError("threshold scale must be positive")
        total = 2 * self.train_cells
        if self.os_rank is None:
            self.os_rank = max(1, round(0.75 * total))
        if not 1 <= self.os_rank <= total:
            raise ValueError(f"os_rank must be in [1, {total}]")


@dataclass
class RadarPointCloud:
    """Detected points as an (N, 4) array: range m, azimuth deg, doppler m/s,
    power dB. Doppler is the range rate (positive = receding)."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)

    def __len__(self):
        return self.points.shape[0]

    def to_csv(self, path) -> None:
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w") as fh:
            fh.write(POINTCLOUD_HEADER + "\n")
            for r, az, dop, p in self.points:
                fh.write(f"{r:.6f},{az:.6f},{dop:.6f},{p:.6f}\n")
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path) -> "RadarPointCloud":
        with open(path) as fh:
            header = fh.readline().strip()
            if header != POINTCLOUD_HEADER:
                raise ValueError(f"unexpected point cloud header {header!r}")
            body = fh.read()
        if not body.strip():
            return cls(np.zeros((0, 4)))
        return cls(np.loadtxt(io.StringIO(body), delimiter=","))


# ----------------------------------------------------------------------
# Tensor transforms
# ----------------------------------------------------------------------

def adc_to_rd(cube: AdcCube, window: bool = False) -> np.ndarray:
    """Range FFT along samples then center-shifted Doppler FFT along chirps.

    Returns the complex RD tensor [C, L, N] with zero velocity at bin L/2.
    """
    win = "hann" if window else None
    rng_fft = fft_axis(cube.data, axis=2, window=win)
    return fft_axis(rng_fft, axis=1, window=win, center_shift=True)


def _angle_dft_matrix(n: int) -> np.ndarray:
    # Naive DFT matrix with fftshift folded in; n = 12 is not a power of two.
    k = np.arange(n)
    f = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return np.roll(f, n // 2, axis=0)  # peak response of the DC lane at row n/2


def rd_to_ra(rd: np.ndarray) -> np.ndarray:
    """Center-shifted DFT across the virtual-channel axis of an RD tensor.

    Boresight (zero inter-channel phase gradient) lands on angle bin C/2.
    """
    rd = np.asarray(rd, dtype=np.complex128)
    mat = _angle_dft_matrix(rd.shape[0])
    return np.tensordot(mat, rd, axes=([1], [0]))


def ra_to_rd(ra: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rd_to_ra` (unshift then scaled conjugate DFT)."""
    ra = np.asarray(ra, dtype=np.complex128)
    n = ra.shape[0]
    mat = _angle_dft_matrix(n)
    inv = np.linalg.inv(mat)
    return np.tensordot(inv, ra, axes=([1], [0]))


def rda_heatmap(cube: AdcCube, window: bool = False) -> np.ndarray:
    """Magnitude heatmap after FFTs along fast time, slow time and channels.

    Returns a real [angle, doppler, range] tensor (all entries >= 0).
    """
    ra = rd_to_ra(adc_to_rd(cube, window=window))
    return np.abs(ra)


# ----------------------------------------------------------------------
# CFAR detection
# ----------------------------------------------------------------------

def cfar_detect(power_map: np.ndarray, params: CfarParams) -> np.ndarray:
    """1-D CFAR along the last axis of a 2-D power map, row by row.

    A cell is flagged iff power > threshold_scale * noise_estimate, where
    the estimate is the training-cell mean (CA), the greater of the
    leading/lagging means (GO), or the os_rank-th smallest training cell
    (OS). Edge cells use truncated windows: means renormalize over the
    available cells and the OS rank is scaled proportionally.
    """
    pm = np.asarray(power_map, dtype=np.float64)
    if pm.ndim != 2:
        raise ValueError("cfar_detect expects a 2-D map (rows x detection axis)")
    g, t = params.guard_cells, params.train_cells
    half = g + t
    n = pm.shape[1]
    if n <= 2 * half:
        raise ValueError(
            f"detection axis extent {n} must exceed the window span {2 * half}"
        )

    padded = np.pad(pm, ((0, 0), (half, half)), constant_values=np.nan)
    # windows[:, j, :] covers cells j-half .. j+half of row i
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * half + 1, axis=1)
    lead = windows[:, :, :t]
    lag = windows[:, :, t + 2 * g + 1:]
    train = np.concatenate([lead, lag], axis=2)

    with np.errstate(invalid="ignore"):
        if params.kind == "ca":
            noise = np.nanmean(train, axis=2)
        elif params.kind == "go":
            lead_mean = np.nanmean(lead, axis=2)
            lag_mean = np.nanmean(lag, axis=2)
            noise = np.fmax(lead_mean, lag_mean)  # fmax ignores one-sided NaN
        else:  # os
            avail = np.sum(~np.isnan(train), axis=2)
            k_eff = np.ceil(params.os_rank * avail / (2 * t)).astype(int)
            k_eff = np.clip(k_eff, 1, np.maximum(avail, 1))
            ordered = np.sort(train, axis=2)  # NaNs sort to the end
            noise = np.take_along_axis(ordered, (k_eff - 1)[:, :, None], axis=2)[:, :, 0]
    return (pm > params.threshold_scale * noise).astype(np.uint8)


def azimuth_from_bin(bin_index: int, num_bins: int, cfg: RadarConfig) -> float:
    """Azimuth (degrees) of a center-shifted angle bin via the array phase model.

    Inverts bin -> inter-channel phase -> angle: theta = asin(dphi / (2*pi*d))
    with d in wavelengths. Raises ValueError when the bin maps outside the
    physical field of view (|sin theta| > 1).
    """
    if not 0 <= bin_index < num_bins:
        raise ValueError(f"bin {bin_index} out of range [0, {num_bins})")
    arg = (bin_index - num_bins / 2.0) / (num_bins * cfg.virtual_spacing)
    if abs(arg) > 1.0:
        raise ValueError(f"angle bin {bin_index} is outside the field of view")
    return float(np.degrees(np.arcsin(arg)))


def bin_from_azimuth(theta_deg: float, num_bins: int, cfg: RadarConfig) -> float:
    """Fractional center-shifted angle bin for an azimuth in degrees."""
    return num_bins / 2.0 + num_bins * cfg.virtual_spacing * float(
        np.sin(np.radians(theta_deg))
    )


def detections_to_pointcloud(
    mask: np.ndarray, heatmap: np.ndarray, cfg: RadarConfig
) -> RadarPointCloud:
    """Convert flagged [angle, doppler, range] cells into physical points.

    Angle bins outside the field of view (only possible for spacings above
    half a wavelength) are skipped.
    """
    mask = np.asarray(mask)
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if mask.shape != heatmap.shape:
        raise ValueError("mask and heatmap shapes differ")
    num_angle = mask.shape[0]
    rows = []
    for a, d, r in zip(*np.nonzero(mask)):
        try:
            az = azimuth_from_bin(int(a), num_angle, cfg)
        except ValueError:
            continue
        rng = r * cfg.range_res
        dop = (d - cfg.num_chirps / 2.0) * cfg.doppler_res
        power = 10.0 * np.log10(heatmap[a, d, r] ** 2 + 1e-300)
        rows.append((rng, az, dop, power))
    return RadarPointCloud(np.array(rows, dtype=np.float64).reshape(-1, 4))


def conventional_pointcloud(
    cube: AdcCube, params: CfarParams, window: bool = False
) -> RadarPointCloud:
    """Classic FFT + CFAR pipeline: heatmap, per-row range CFAR, point list."""
    hm = rda_heatmap(cube, window=window)
    a, d, r = hm.shape
    mask = cfar_detect(hm.reshape(a * d, r) ** 2, params).reshape(a, d, r)
    return detections_to_pointcloud(mask, hm, cube.config)
