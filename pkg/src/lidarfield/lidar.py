"""Spinning-LiDAR model: beam raster, ego motion, field-driven scan synthesis.

Beam directions use the standard spherical convention
d = (cos phi cos theta, cos phi sin theta, sin phi), which is unit length
for all angles; rows are elevation channels in ascending order and
azimuth columns sweep [-pi, pi) left-handed about +z.

NL_THREADS caps the scan-synthesis worker threads; chunks merge into
disjoint output slices, so results never depend on the thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as _dcfield

import numpy as np

from . import geometry
from .field import N_CLASSES
from .renderer import classify_return, render_rays


def worker_threads():
    try:
        return max(1, int(os.environ.get("NL_THREADS", "1")))
    except ValueError:
        return 1

IGNORE_LABEL = N_CLASSES


@dataclass(frozen=True)
class LidarRig:
    channels: int = 32
    fov_down_deg: float = -30.67
    fov_up_deg: float = 10.67
    width: int = 1024
    spin_rate_hz: float = 20.0
    mount: np.ndarray = _dcfield(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.channels < 2 or self.width < 4:
            raise ValueError("rig needs >= 2 channels and >= 4 azimuth steps")
        if self.fov_up_deg <= self.fov_down_deg:
            raise ValueError("fov_up_deg must exceed fov_down_deg")
        object.__setattr__(self, "mount", np.asarray(self.mount, dtype=np.float64))

    @property
    def elevations(self):
        """Per-row elevation angles (radians), ascending, endpoints exact."""
        return np.radians(np.linspace(self.fov_down_deg, self.fov_up_deg, self.channels))

    @property
    def azimuths(self):
        """Per-column azimuth bin centers (radians) over [-pi, pi)."""
        step = 2.0 * np.pi / self.width
        return -np.pi + (np.arange(self.width) + 0.5) * step


@dataclass(frozen=True)
class EgoState:
    origin: np.ndarray
    velocity: np.ndarray = _dcfield(default_factory=lambda: np.zeros(3))
    dt: float = 0.0

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError(f"dt must be >= 0, got {self.dt}")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=np.float64))


def ego_origin(ego):
    """Sensor origin advanced by ego motion: o0 + dt * v."""
    return ego.origin + ego.dt * ego.velocity


def spherical_dir(theta, phi):
    """Unit direction(s) for azimuth theta and elevation phi."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=np.float64),
                                     np.asarray(phi, dtype=np.float64))
    return np.stack([np.cos(phi) * np.cos(theta),
                     np.cos(phi) * np.sin(theta),
                     np.sin(phi)], axis=-1)


def beam_directions(rig):
    """All beam directions (H, W, 3) plus the (theta, phi) grids."""
    phi = rig.elevations
    theta = rig.azimuths
    dirs = spherical_dir(theta[None, :], phi[:, None])
    return dirs, theta, phi


def column_origins(rig, origin, velocity=None, rolling_shutter=False):
    """Per-azimuth-column sensor origins (W, 3) within one spin."""
    base = np.asarray(origin, dtype=np.float64) + rig.mount
    if not rolling_shutter or velocity is None:
        return np.broadcast_to(base, (rig.width, 3)).copy()
    dt_col = (np.arange(rig.width) / rig.width) / rig.spin_rate_hz
    return base + dt_col[:, None] * np.asarray(velocity, dtype=np.float64)


@dataclass
class LidarScan:
    """One full sweep: (H, W) beam-aligned arrays in the world frame."""
    points: np.ndarray   # (H, W, 3)
    labels: np.ndarray   # (H, W) int, IGNORE_LABEL where invalid
    valid: np.ndarray    # (H, W) bool
    colors: np.ndarray   # (H, W, 3)
    ranges: np.ndarray   # (H, W) meters, NaN where invalid
    pose: np.ndarray     # (3, 4) sensor pose at frame start
    frame_id: int = 0
    normals: np.ndarray = None  # (H, W, 3), oracle scans only

    @property
    def shape(self):
        return self.valid.shape

    def n_valid(self):
        return int(self.valid.sum())

    def with_validity(self, new_valid):
        """Copy with a reduced validity mask; sentinel out newly-invalid cells."""
        new_valid = np.asarray(new_valid, dtype=bool) & self.valid
        scan = LidarScan(self.points.copy(), self.labels.copy(), new_valid,
                         self.colors.copy(), self.ranges.copy(), self.pose.copy(),
                         self.frame_id,
                         None if self.normals is None else self.normals.copy())
        off = ~new_valid
        scan.points[off] = 0.0
        scan.labels[off] = IGNORE_LABEL
        scan.colors[off] = 0.0
        scan.ranges[off] = np.nan
        return scan


def simulate_scan(fld, rig, ego, seed=0, tau_acc=0.95, n_samples=128,
                  jitter=False, rolling_shutter=False, frame_id=0, chunk=8192):
    """Render one LiDAR sweep from the field (coarse scan, before raydrop).

    Beams whose accumulated opacity stays below tau_acc are no-returns.
    Labels are the argmax of the composited semantic logits.
    """
    if not 0.0 < tau_acc < 1.0:
        raise ValueError(f"tau_acc must lie in (0, 1), got {tau_acc}")
    origin = ego_origin(ego)
    dirs, _, _ = beam_directions(rig)
    h, w = rig.channels, rig.width
    cols = column_origins(rig, origin, ego.velocity, rolling_shutter)
    origins = np.broadcast_to(cols[None, :, :], (h, w, 3)).reshape(-1, 3)
    flat_dirs = dirs.reshape(-1, 3)

    lo, hi = fld.config.bounds
    t0, t1 = geometry.ray_aabb(origins, flat_dirs, lo, hi)
    t_near = np.maximum(t0, 1e-3)
    t_far = np.maximum(t1, t_near + 1e-6)

    n_rays = h * w
    ranges = np.full(n_rays, np.nan)
    valid = np.zeros(n_rays, dtype=bool)
    labels = np.full(n_rays, IGNORE_LABEL, dtype=np.int64)
    colors = np.zeros((n_rays, 3))

    def run_chunk(s):
        e = min(s + chunk, n_rays)
        res = render_rays(fld, origins[s:e], flat_dirs[s:e], t_near[s:e], t_far[s:e],
                          n_samples=n_samples,
                          seed=np.random.SeedSequence((int(seed), s)),
                          jitter=jitter).values()
        ret, rng = classify_return(res, tau_acc)
        valid[s:e] = ret
        ranges[s:e] = rng
        labels[s:e][ret] = res.logits[ret].argmax(axis=-1)
        colors[s:e][ret] = np.clip(res.color[ret], 0.0, 1.0)

    starts = range(0, n_rays, chunk)
    with fld.no_grad():
        workers = worker_threads()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run_chunk, starts))
        else:
            for s in starts:
                run_chunk(s)

    points = np.zeros((n_rays, 3))
    points[valid] = origins[valid] + ranges[valid, None] * flat_dirs[valid]
    pose = geometry.make_pose(translation=origin + rig.mount)
    return LidarScan(points.reshape(h, w, 3), labels.reshape(h, w),
                     valid.reshape(h, w), colors.reshape(h, w, 3),
                     ranges.reshape(h, w), pose, frame_id)
