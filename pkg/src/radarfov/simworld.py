"""Synthetic indoor world: scenes, sensor trajectories, LiDAR scans, FMCW
radar echoes and geometric free-FoV ground truth.

The world is 2.5D: walls and obstacles are 2D footprints with a height
span; the sensor moves in the horizontal plane at a fixed height. Radar
processing is bird's-eye-view, so echo ranges/azimuths use horizontal
geometry only, while the LiDAR ray cast is fully 3D (rings at several
elevations, including floor and ceiling returns so the label pipeline's
height filtering has something to remove).

Scene classes mirror four indoor archetypes: "lab" (cluttered room),
"corridor" (narrow elongated), "open" (large sparse room), "tunnel"
(long wide duct).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import AdcCube, RadarConfig, C0
from .grids import PolarGrid

SCENE_CLASSES = ("lab", "corridor", "open", "tunnel")

# surface kinds for lidar intensity
_KIND_WALL, _KIND_OBSTACLE, _KIND_FLOOR, _KIND_CEILING = 0, 1, 2, 3
_BASE_INTENSITY = {_KIND_WALL: 0.9, _KIND_OBSTACLE: 0.7, _KIND_FLOOR: 0.4, _KIND_CEILING: 0.4}


class SimulationError(RuntimeError):
    """Raised when scene or trajectory generation cannot satisfy its contract."""


@dataclass
class PoseSE3:
    """Rigid sensor pose: world = rotation @ sensor + translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must be proper (det = +1)")

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def to_sensor(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.translation) @ self.rotation

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    @classmethod
    def from_yaw(cls, yaw: float, translation) -> "PoseSE3":
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, np.asarray(translation, dtype=np.float64))


@dataclass
class Obstacle:
    """Axis-aligned box footprint with a height span."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    z0: float = 0.0
    z1: float = 2.2

    def contains(self, x, y, margin: float = 0.0):
        return (
            (x >= self.xmin - margin)
            & (x <= self.xmax + margin)
            & (y >= self.ymin - margin)
            & (y <= self.ymax + margin)
        )


@dataclass
class LidarFrame:
    """Point cloud in the sensor frame: (N, 4) array of x, y, z, intensity."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("lidar points must be finite")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class Scene:
    """Room footprint, obstacles and the radar scatterers living on them."""

    scene_class: str
    bounds: tuple | None  # (xmin, ymin, xmax, ymax); None = empty stub
    height: float = 3.0
    obstacles: list = field(default_factory=list)
    scatterers: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    seed: int = 0

    def __post_init__(self):
        self.scatterers = np.asarray(self.scatterers, dtype=np.float64).reshape(-1, 4)
        self._segments_cache = None

    def segments(self):
        """All vertical surfaces as ((S,4) xyxy, (S,2) z-span, (S,) kind)."""
        if self._segments_cache is None:
            segs, zs, kinds = [], [], []
            if self.bounds is not None:
                x0, y0, x1, y1 = self.bounds
                for a, b in (((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)),
                             ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))):
                    segs.append((*a, *b))
                    zs.append((0.0, self.height))
                    kinds.append(_KIND_WALL)
            for ob in self.obstacles:
                corners = [(ob.xmin, ob.ymin), (ob.xmax, ob.ymin),
                           (ob.xmax, ob.ymax), (ob.xmin, ob.ymax)]
                for i in range(4):
                    segs.append((*corners[i], *corners[(i + 1) % 4]))
                    zs.append((ob.z0, ob.z1))
                    kinds.append(_KIND_OBSTACLE)
            self._segments_cache = (
                np.array(segs, dtype=np.float64).reshape(-1, 4),
                np.array(zs, dtype=np.float64).reshape(-1, 2),
                np.array(kinds, dtype=np.int64),
            )
        return self._segments_cache

    def is_free(self, x, y, clearance: float = 0.0):
        """True where (x, y) is inside the room and outside every obstacle."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.bounds is None:
            return np.ones_like(x, dtype=bool)
        x0, y0, x1, y1 = self.bounds
        ok = (x >= x0 + clearance) & (x <= x1 - clearance) \
            & (y >= y0 + clearance) & (y <= y1 - clearance)
        for ob in self.obstacles:
            ok &= ~ob.contains(x, y, margin=clearance)
        return ok


@dataclass
class FrameRecord:
    """One dataset row: pose, LiDAR frame, ADC cube and ego velocity."""

    frame_id: int
    pose: PoseSE3
    lidar: LidarFrame
    adc: AdcCube
    velocity: np.ndarray

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)


# ----------------------------------------------------------------------
# Scene generation
# ----------------------------------------------------------------------

_SIZE_RANGES = {
    # (width lo, width hi, length lo, length hi, obstacle count lo/hi inclusive)
    "lab": (7.0, 10.0, 9.0, 12.0, 5, 7),
    "corridor": (2.6, 4.0, 16.0, 24.0, 0, 2),
    "open": (10.0, 14.0, 12.0, 16.0, 0, 2),
    "tunnel": (3.5, 5.5, 20.0, 30.0, 0, 1),
}


def _place_obstacles(rng, bounds, count, height):
    x0, y0, x1, y1 = bounds
    max_w = min(1.8, (x1 - x0) - 1.4)
    max_l = min(1.8, (y1 - y0) - 1.4)
    if count and (max_w < 0.3 or max_l < 0.3):
        raise SimulationError("room too narrow for interior obstacles")
    obstacles = []
    tries = 0
    while len(obstacles) < count and tries < 400:
        tries += 1
        w = rng.uniform(min(0.5, max_w), max_w)
        l = rng.uniform(min(0.5, max_l), max_l)
        cx = rng.uniform(x0 + 0.6 + w / 2, x1 - 0.6 - w / 2)
        cy = rng.uniform(y0 + 0.6 + l / 2, y1 - 0.6 - l / 2)
        cand = Obstacle(cx - w / 2, cy - l / 2, cx + w / 2, cy + l / 2,
                        0.0, rng.uniform(1.6, min(2.4, height - 0.4)))
        # keep a walkable gap between obstacles
        if any(not (cand.xmax + 1.2 < o.xmin or o.xmax + 1.2 < cand.xmin
                    or cand.ymax + 1.2 < o.ymin or o.ymax + 1.2 < cand.ymin)
               for o in obstacles):
            continue
        obstacles.append(cand)
    if len(obstacles) < count:
        raise SimulationError(f"could not place {count} obstacles after {tries} tries")
    return obstacles


def _scatter_on_faces(rng, scene: Scene, density: float) -> np.ndarray:
    segs, zspans, _ = scene.segments()
    rows = []
    for (ax, ay, bx, by), (z0, z1) in zip(segs, zspans):
        length = float(np.hypot(bx - ax, by - ay))
        k = max(1, int(round(density * length)))
        s = rng.uniform(0.0, 1.0, k)
        x = ax + s * (bx - ax)
        y = ay + s * (by - ay)
        z = rng.uniform(z0 + 0.05 * (z1 - z0), z1 - 0.05 * (z1 - z0), k)
        refl = rng.lognormal(0.0, 0.35, k)
        rows.append(np.column_stack([x, y, z, refl]))
    if not rows:
        return np.zeros((0, 4))
    return np.concatenate(rows, axis=0)


def build_scene(scene_class: str, seed: int, size=None,
                scatterer_density: float = 50.0) -> Scene:
    """Deterministically generate one scene of the given class.

    ``size`` optionally overrides the sampled (width, length) in meters;
    rooms smaller than 2 m on a side are rejected.
    """
    if scene_class not in SCENE_CLASSES:
        raise ValueError(f"unknown scene class {scene_class!r}")
    rng = np.random.default_rng(seed)
    w_lo, w_hi, l_lo, l_hi, n_lo, n_hi = _SIZE_RANGES[scene_class]
    if size is None:
        width, length = rng.uniform(w_lo, w_hi), rng.uniform(l_lo, l_hi)
    else:
        width, length = float(size[0]), float(size[1])
    if min(width, length) < 2.0:
        raise ValueError(f"degenerate room size {width:.2f} x {length:.2f} m")
    height = rng.uniform(2.8, 3.4)
    bounds = (-width / 2, -length / 2, width / 2, length / 2)
    count = int(rng.integers(n_lo, n_hi + 1))
    scene = Scene(scene_class=scene_class, bounds=bounds, height=height,
                  obstacles=_place_obstacles(rng, bounds, count, height), seed=seed)
    scene.scatterers = _scatter_on_faces(rng, scene, scatterer_density)
    return scene


# ----------------------------------------------------------------------
# Trajectory
# ----------------------------------------------------------------------

def trajectory(scene: Scene, num_frames: int, speed: float = 1.0, seed: int = 0,
               frame_interval: float = 0.1, sensor_height: float = 1.0,
               clearance: float = 0.45):
    """Smooth collision-free wander through free space.

    Returns a list of (PoseSE3, velocity) with yaw aligned to the motion
    direction and consecutive positions exactly speed*frame_interval apart.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    rng = np.random.default_rng(seed)

    pos = None
    for _ in range(1000):
        if scene.bounds is None:
            pos = np.zeros(2)
            break
        x0, y0, x1, y1 = scene.bounds
        cand = rng.uniform([x0, y0], [x1, y1])
        if scene.is_free(cand[0], cand[1], clearance=max(clearance, 0.8)):
            pos = cand
            break
    if pos is None:
        raise SimulationError("no free path found: could not place a start pose")

    heading = rng.uniform(0.0, 2.0 * np.pi)
    step = speed * frame_interval
    lookahead = max(3.0 * step, 0.5)
    out = []
    for _ in range(num_frames):
        vel = speed * np.array([np.cos(heading), np.sin(heading), 0.0])
        out.append((PoseSE3.from_yaw(heading, (pos[0], pos[1], sensor_height)), vel))
        # steer: small random turn, scan away from blockages if needed
        proposal = heading + rng.normal(0.0, 0.15)
        placed = False
        for k in range(48):
            delta = 0.0 if k == 0 else (0.3 * ((k + 1) // 2)) * (1 if k % 2 else -1)
            cand = proposal + delta
            d = np.array([np.cos(cand), np.sin(cand)])
            ahead = pos + lookahead * d
            nxt = pos + step * d
            if scene.is_free(*ahead, clearance=clearance) and \
                    scene.is_free(*nxt, clearance=clearance):
                heading, pos = cand, nxt
                placed = True
                break
        if not placed:
            raise SimulationError("no free path found: sensor is boxed in")
    return out


# ----------------------------------------------------------------------
# Ray casting
# ----------------------------------------------------------------------

def _ray_segment_distances(origins, dirs, segs):
    """Horizontal distances from each ray to every segment (inf if missed).

    origins: (M, 2), dirs: (M, 2) unit, segs: (S, 4). Returns (M, S).
    """
    if segs.shape[0] == 0 or origins.shape[0] == 0:
        return np.full((origins.shape[0], segs.shape[0]), np.inf)
    a = segs[None, :, 0:2]
    e = (segs[:, 2:4] - segs[:, 0:2])[None, :, :]  # (1, S, 2)
    d = dirs[:, None, :]
    ao = a - origins[:, None, :]
    denom = d[..., 0] * e[..., 1] - d[..., 1] * e[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (ao[..., 0] * e[..., 1] - ao[..., 1] * e[..., 0]) / denom
        s = (ao[..., 0] * d[..., 1] - ao[..., 1] * d[..., 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (u > 1e-9) & (s >= 0.0) & (s <= 1.0)
    return np.where(hit, u, np.inf)


def first_hit_distance_2d(scene: Scene, origin, dirs) -> np.ndarray:
    """Horizontal distance to the nearest vertical surface per ray."""
    segs, _, _ = scene.segments()
    origins = np.broadcast_to(np.asarray(origin, float)[None, :2], (dirs.shape[0], 2))
    return _ray_segment_distances(origins, dirs, segs).min(axis=1) \
        if segs.size else np.full(dirs.shape[0], np.inf)


def lidar_scan(scene: Scene, pose: PoseSE3, num_beams: int = 720,
               num_rings: int = 8, noise_sigma: float = 0.02, seed: int = 0,
               elev_span_deg=(-22.5, 20.0)) -> LidarFrame:
    """Spinning multi-ring LiDAR: first-hit ray cast with Gaussian range noise.

    Beams sweep 360 degrees at ``num_rings`` elevations; walls, obstacle
    faces, floor and ceiling are all candidate surfaces. Points come back
    in the sensor frame.
    """
    rng = np.random.default_rng(seed)
    az = np.linspace(0.0, 2.0 * np.pi, num_beams, endpoint=False)
    el = np.radians(np.linspace(elev_span_deg[0], elev_span_deg[1], num_rings))
    azg, elg = np.meshgrid(az, el)
    az, el = azg.ravel(), elg.ravel()
    dirs_s = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    dirs_w = dirs_s @ pose.rotation.T
    origin = pose.translation

    segs, zspans, kinds = scene.segments()
    m = dirs_s.shape[0]
    best_t = np.full(m, np.inf)
    best_kind = np.full(m, -1, dtype=int)

    cos_el = np.maximum(np.linalg.norm(dirs_w[:, :2], axis=1), 1e-12)
    h_dirs = dirs_w[:, :2] / cos_el[:, None]
    if segs.size:
        u = _ray_segment_distances(
            np.broadcast_to(origin[None, :2], (m, 2)), h_dirs, segs)
        t3 = u / cos_el[:, None]
        z_hit = origin[2] + t3 * dirs_w[:, 2:3]
        ok = (z_hit >= zspans[None, :, 0] - 1e-9) & (z_hit <= zspans[None, :, 1] + 1e-9)
        t3 = np.where(ok, t3, np.inf)
        idx = np.argmin(t3, axis=1)
        tmin = t3[np.arange(m), idx]
        better = tmin < best_t
        best_t[better] = tmin[better]
        best_kind[better] = kinds[idx[better]]

    if scene.bounds is not None:
        x0, y0, x1, y1 = scene.bounds
        for z_plane, kind in ((0.0, _KIND_FLOOR), (scene.height, _KIND_CEILING)):
            dz = dirs_w[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (z_plane - origin[2]) / dz
            px = origin[0] + t * dirs_w[:, 0]
            py = origin[1] + t * dirs_w[:, 1]
            ok = (t > 1e-9) & np.isfinite(t) & (px >= x0) & (px <= x1) \
                & (py >= y0) & (py <= y1) & (t < best_t)
            best_t[ok] = t[ok]
            best_kind[ok] = kind

    hit = np.isfinite(best_t)
    if not hit.any():
        return LidarFrame(np.zeros((0, 4)))
    t = best_t[hit] + rng.normal(0.0, noise_sigma, int(hit.sum()))
    pts = np.maximum(t, 0.01)[:, None] * dirs_s[hit]
    base = np.array([_BASE_INTENSITY[k] for k in best_kind[hit]])
    intensity = np.clip(base * (1.0 + 0.1 * rng.standard_normal(base.shape)), 0.05, None)
    return LidarFrame(np.column_stack([pts, intensity]))


# ----------------------------------------------------------------------
# Radar echo
# ----------------------------------------------------------------------

def visible_scatterers(scene: Scene, pose: PoseSE3, max_range: float):
    """Indices of scatterers in the forward half-plane, in range, unoccluded."""
    sc = scene.scatterers
    if sc.shape[0] == 0:
        return np.zeros(0, dtype=int)
    rel = sc[:, :2] - pose.translation[:2]
    local = rel @ pose.rotation[:2, :2]
    r = np.linalg.norm(local, axis=1)
    cand = np.nonzero((local[:, 0] > 1e-6) & (r > 0.05) & (r <= max_range))[0]
    if cand.size == 0:
        return cand
    segs, _, _ = scene.segments()
    dirs = rel[cand] / r[cand, None]
    u = _ray_segment_distances(
        np.broadcast_to(pose.translation[None, :2], (cand.size, 2)), dirs, segs)
    blocked = (u < (r[cand, None] - 1e-6)).any(axis=1)
    return cand[~blocked]


def radar_echo(scene: Scene, pose: PoseSE3, velocity, cfg: RadarConfig,
               snr_db: float | None = 30.0, seed: int = 0) -> AdcCube:
    """Point-scatterer FMCW echo for one frame.

    Each visible scatterer contributes a separable phase ramp across the
    sample (beat frequency from range), chirp (Doppler from range rate) and
    channel (linear-array phase from azimuth) axes, with amplitude
    reflectivity / r^2 and a random start phase. Complex white Gaussian
    noise is scaled so the strongest scatterer reaches ``snr_db`` in the RD
    map; ``snr_db=None`` disables noise.
    """
    rng = np.random.default_rng(seed)
    vel = np.asarray(velocity, dtype=np.float64).reshape(3)
    c, l, n = cfg.num_channels, cfg.num_chirps, cfg.num_samples
    out = np.zeros((c, l, n), dtype=np.complex128)

    idx = visible_scatterers(scene, pose, cfg.max_range)
    if idx.size:
        sc = scene.scatterers[idx]
        rel = sc[:, :2] - pose.translation[:2]
        r = np.linalg.norm(rel, axis=1)
        local = rel @ pose.rotation[:2, :2]
        theta = np.arctan2(local[:, 1], local[:, 0])
        v_r = -(rel / r[:, None] * vel[None, :2]).sum(axis=1)  # range rate

        amp = sc[:, 3] / np.maximum(r, 0.5) ** 2
        f_beat = 2.0 * cfg.chirp_slope * r / C0
        f_dopp = 2.0 * v_r / cfg.wavelength
        dphi = 2.0 * np.pi * cfg.virtual_spacing * np.sin(theta)
        phi0 = rng.uniform(0.0, 2.0 * np.pi, idx.size)

        chan = np.exp(1j * np.outer(dphi, np.arange(c)))         # (K, C)
        chirp = np.exp(2j * np.pi * np.outer(f_dopp * cfg.chirp_interval, np.arange(l)))
        samp = np.exp(2j * np.pi * np.outer(f_beat * cfg.sample_interval, np.arange(n)))
        chan = chan * (amp * np.exp(1j * phi0))[:, None]
        for ci in range(c):
            out[ci] = (chan[:, ci:ci + 1] * chirp).T @ samp

        if snr_db is not None and np.isfinite(snr_db):
            sigma = amp.max() * np.sqrt(l * n) * 10.0 ** (-snr_db / 20.0)
            noise = rng.standard_normal((c, l, n)) + 1j * rng.standard_normal((c, l, n))
            out += sigma / np.sqrt(2.0) * noise
    return AdcCube(cfg, out)


# ----------------------------------------------------------------------
# Geometric ground truth
# ----------------------------------------------------------------------

def geometric_fov(scene: Scene, pose: PoseSE3, grid: PolarGrid | None = None) -> np.ndarray:
    """Unobstructed-FoV label straight from geometry (the pipeline oracle).

    For each azimuth column the distance to the first vertical surface is
    computed by ray casting; cells wholly nearer than that distance are 1,
    the obstruction cell and everything beyond are 0.
    """
    grid = grid or PolarGrid()
    az = np.radians(grid.azimuth_centers_deg())
    dirs_s = np.column_stack([np.cos(az), np.sin(az)])
    dirs_w = dirs_s @ pose.rotation[:2, :2].T
    dist = first_hit_distance_2d(scene, pose.translation[:2], dirs_w)
    far_edges = (np.arange(grid.num_range) + 1) * grid.range_bin_size
    return (far_edges[:, None] <= dist[None, :] + 1e-9).astype(np.uint8)


# ----------------------------------------------------------------------
# Dataset files
# ----------------------------------------------------------------------

def write_pose_json(path, pose: PoseSE3, velocity) -> None:
    doc = {
        "rotation": [float(v) for v in pose.rotation.reshape(-1)],
        "translation": [float(v) for v in pose.translation],
        "velocity": [float(v) for v in np.asarray(velocity).reshape(3)],
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
    os.replace(tmp, path)


def read_pose_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    pose = PoseSE3(np.array(doc["rotation"]).reshape(3, 3), np.array(doc["translation"]))
    return pose, np.array(doc["velocity"], dtype=np.float64)


def write_lidar_csv(path, frame: LidarFrame) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("x,y,z,intensity\n")
        for x, y, z, i in frame.points:
            fh.write(f"{x:.6f},{y:.6f},{z:.6f},{i:.6f}\n")
    os.replace(tmp, path)


def read_lidar_csv(path) -> LidarFrame:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 4))
    return LidarFrame(data)
