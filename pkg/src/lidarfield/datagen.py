"""Oracle training data: posed camera views, LiDAR frames, flat ray pools.

Sky pixels (ignore label) are excluded from every supervision pool, so
camera rays carry color + weak label and LiDAR rays carry depth plus an
optional ground-truth label flag (frame-level, mirroring sparsely
annotated drives).
"""

from dataclasses import dataclass

import numpy as np

from . import geometry
from .lidar import IGNORE_LABEL, beam_directions
from .oracle import camera_rays, corrupt_labels, render_oracle_camera, sample_oracle_lidar


@dataclass
class CameraView:
    pose: np.ndarray
    intrinsics: tuple
    width: int
    height: int
    image: np.ndarray
    weak_labels: np.ndarray
    depth: np.ndarray


@dataclass
class ReconData:
    cam_origins: np.ndarray
    cam_dirs: np.ndarray
    cam_tn: np.ndarray
    cam_tf: np.ndarray
    cam_colors: np.ndarray
    cam_labels: np.ndarray
    lidar_origins: np.ndarray
    lidar_dirs: np.ndarray
    lidar_tn: np.ndarray
    lidar_tf: np.ndarray
    lidar_depths: np.ndarray
    lidar_labels: np.ndarray
    lidar_has_label: np.ndarray

    @property
    def n_cam(self):
        return self.cam_origins.shape[0]

    @property
    def n_lidar(self):
        return self.lidar_origins.shape[0]


def ring_camera_poses(n, center=(0.0, 0.0, 1.0), radius=8.0, height=3.0):
    """n inward-looking poses on a circle, with mild height variation."""
    poses = []
    for i in range(n):
        a = 2.0 * np.pi * i / n
        eye = (center[0] + radius * np.cos(a), center[1] + radius * np.sin(a),
               height + 0.6 * np.sin(3.0 * a))
        poses.append(geometry.look_at(eye, center))
    return poses


def pinhole_intrinsics(width, height, hfov_deg=70.0):
    fx = width / (2.0 * np.tan(np.radians(hfov_deg) / 2.0))
    return (fx, fx, width / 2.0, height / 2.0)


def render_views(scene, poses, width, height, weak_label_rate=0.0, seed=0,
                 intrinsics=None):
    """Oracle camera views with optionally corrupted (weak) labels."""
    intr = intrinsics or pinhole_intrinsics(width, height)
    views = []
    for i, pose in enumerate(poses):
        color, labels, depth = render_oracle_camera(scene, pose, intr, width, height)
        weak = corrupt_labels(labels, weak_label_rate, seed=(seed * 1000 + i)) \
            if weak_label_rate > 0 else labels
        views.append(CameraView(pose, intr, width, height, color, weak, depth))
    return views


def line_ego_states(n, start=(-2.5, -4.0, 1.8), step=(0.55, 0.9, 0.0),
                    velocity=(10.0, 0.0, 0.0)):
    """n sensor states along a line through the scene."""
    from .lidar import EgoState
    start = np.asarray(start, dtype=np.float64)
    step = np.asarray(step, dtype=np.float64)
    return [EgoState(start + i * step, velocity) for i in range(n)]


def build_recon_data(scene, views, rig, scans, bounds, label_frame_fraction=1.0):
    """Flatten views and oracle scans into supervised ray pools.

    label_frame_fraction controls how many LiDAR frames carry ground
    truth labels (the first ceil(fraction * n) frames).
    """
    lo, hi = np.asarray(bounds, dtype=np.float64)

    co, cd, cc, cl = [], [], [], []
    for view in views:
        origins, dirs = camera_rays(view.pose, view.intrinsics, view.width, view.height)
        labels = view.weak_labels.reshape(-1)
        hit = labels != IGNORE_LABEL
        co.append(origins[hit])
        cd.append(dirs[hit])
        cc.append(view.image.reshape(-1, 3)[hit])
        cl.append(labels[hit])
    cam_origins = np.concatenate(co)
    cam_dirs = np.concatenate(cd)
    cam_tn, cam_tf = _ray_bounds(cam_origins, cam_dirs, lo, hi)

    n_labeled = int(np.ceil(label_frame_fraction * len(scans)))
    lo_, ld_, dep, lab, has = [], [], [], [], []
    for i, scan in enumerate(scans):
        dirs, _, _ = beam_directions(rig)
        origin = scan.pose[:, 3]
        v = scan.valid
        n_v = int(v.sum())
        lo_.append(np.broadcast_to(origin, (n_v, 3)))
        ld_.append(dirs[v])
        dep.append(scan.ranges[v])
        lab.append(scan.labels[v])
        has.append(np.full(n_v, i < n_labeled))
    lidar_origins = np.concatenate(lo_)
    lidar_dirs = np.concatenate(ld_)
    lidar_tn, lidar_tf = _ray_bounds(lidar_origins, lidar_dirs, lo, hi)

    return ReconData(cam_origins, cam_dirs, cam_tn, cam_tf,
                     np.concatenate(cc), np.concatenate(cl),
                     lidar_origins, lidar_dirs, lidar_tn, lidar_tf,
                     np.concatenate(dep), np.concatenate(lab), np.concatenate(has))


def _ray_bounds(origins, dirs, lo, hi):
    t0, t1 = geometry.ray_aabb(origins, dirs, lo, hi)
    tn = np.maximum(t0, 1e-3)
    tf = np.maximum(t1, tn + 1e-6)
    return tn, tf


def oracle_scan_set(scene, rig, ego_states, rolling_shutter=False, frame_offset=0):
    return [sample_oracle_lidar(scene, rig, ego, rolling_shutter=rolling_shutter,
                                frame_id=frame_offset + i)
            for i, ego in enumerate(ego_states)]
