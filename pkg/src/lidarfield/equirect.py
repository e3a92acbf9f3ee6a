"""Equirectangular range images and sim/real pair construction.

Row = nearest elevation channel (rejected beyond half a channel spacing,
ties to the lower row), column = floor((theta + pi) / step) with azimuth
wrap-around. Cell collisions keep the nearest point, so projection is
independent of input point order.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry
from .lidar import IGNORE_LABEL, beam_directions, spherical_dir


@dataclass
class EquirectImage:
    depth: np.ndarray     # (H, W) meters, NaN where invalid
    color: np.ndarray     # (H, W, 3)
    label: np.ndarray     # (H, W) int, IGNORE_LABEL where invalid
    variance: np.ndarray  # (H, W) local population depth variance
    valid: np.ndarray     # (H, W) bool
    pose: np.ndarray      # (3, 4)

    @property
    def shape(self):
        return self.valid.shape

    def copy(self):
        return EquirectImage(self.depth.copy(), self.color.copy(), self.label.copy(),
                             self.variance.copy(), self.valid.copy(), self.pose.copy())


@dataclass
class ScanPair:
    """Raydrop training example: simulated image, real image, target mask.

    gt_mask is the real validity restricted to sim-valid cells; the loss
    domain is sim.valid.
    """
    sim: EquirectImage
    real: EquirectImage
    gt_mask: np.ndarray


def project(scan, rig):
    """Project a world-frame scan into its sensor-frame equirect image."""
    h, w = rig.channels, rig.width
    phi0 = np.radians(rig.fov_down_deg)
    phi_step = np.radians(rig.fov_up_deg - rig.fov_down_deg) / (rig.channels - 1)
    col_step = 2.0 * np.pi / w

    pts = scan.points[scan.valid]
    colors = scan.colors[scan.valid]
    labels = scan.labels[scan.valid]

    depth = np.full((h, w), np.nan)
    color = np.zeros((h, w, 3))
    label = np.full((h, w), IGNORE_LABEL, dtype=np.int64)
    valid = np.zeros((h, w), dtype=bool)

    if pts.shape[0]:
        local = (pts - scan.pose[:, 3]) @ scan.pose[:, :3]
        r = np.linalg.norm(local, axis=1)
        theta = np.arctan2(local[:, 1], local[:, 0])
        phi = np.arcsin(np.clip(local[:, 2] / r, -1.0, 1.0))

        rowf = (phi - phi0) / phi_step
        row = np.ceil(rowf - 0.5).astype(np.int64)  # ties go to the lower row
        keep = (row >= 0) & (row < h) & (np.abs(phi - (phi0 + row * phi_step))
                                         <= phi_step / 2 + 1e-12)
        col = (np.floor((theta + np.pi) / col_step).astype(np.int64)) % w

        order = np.lexsort((labels[keep], -r[keep]))  # nearest written last
        rows, cols = row[keep][order], col[keep][order]
        depth[rows, cols] = r[keep][order]
        color[rows, cols] = colors[keep][order]
        label[rows, cols] = labels[keep][order]
        valid[rows, cols] = True

    img = EquirectImage(depth, color, label, np.zeros((h, w)), valid, scan.pose.copy())
    img.variance = depth_variance(img)
    return img


def back_project(img, rig):
    """Valid cells back to world points; inverse of project on exact beams."""
    dirs, _, _ = beam_directions(rig)
    rows, cols = np.nonzero(img.valid)
    if rows.size == 0:
        return np.zeros((0, 3))
    local = img.depth[rows, cols, None] * dirs[rows, cols]
    return geometry.pose_apply(img.pose, local)


def depth_variance(img, window=3):
    """Population variance of valid depths in a window around each cell.

    Columns wrap azimuthally, rows clamp; cells whose window holds fewer
    than two valid depths get 0.
    """
    h, w = img.shape
    half = window // 2
    d = np.where(img.valid, img.depth, 0.0)
    v = img.valid.astype(np.float64)
    cnt = np.zeros((h, w))
    s1 = np.zeros((h, w))
    s2 = np.zeros((h, w))
    rows = np.arange(h)
    for dr in range(-half, half + 1):
        rr = np.clip(rows + dr, 0, h - 1)
        for dc in range(-half, half + 1):
            dd = np.roll(d[rr], dc, axis=1)
            vv = np.roll(v[rr], dc, axis=1)
            cnt += vv
            s1 += dd
            s2 += dd * dd
    out = np.zeros((h, w))
    enough = cnt >= 2
    mu = s1[enough] / cnt[enough]
    out[enough] = np.maximum(s2[enough] / cnt[enough] - mu * mu, 0.0)
    return out


def build_pair(sim_scan, real_scan, rig):
    """Project a pose-matched (sim, real) scan pair into a ScanPair."""
    if np.abs(sim_scan.pose - real_scan.pose).max() > 1e-6:
        raise ValueError("sim and real scans must share a pose (difference "
                         f"{np.abs(sim_scan.pose - real_scan.pose).max():.3e})")
    sim = project(sim_scan, rig)
    real = project(real_scan, rig)
    return ScanPair(sim, real, real.valid & sim.valid)


def beam_grid_image(scan, rig):
    """Equirect view of an already beam-aligned scan (no reprojection)."""
    img = EquirectImage(np.where(scan.valid, scan.ranges, np.nan),
                        scan.colors.copy(), scan.labels.copy(),
                        np.zeros(scan.valid.shape), scan.valid.copy(),
                        scan.pose.copy())
    img.variance = depth_variance(img)
    return img


def cell_directions(rig):
    """Unit direction of every (row, col) cell, matching beam_directions."""
    dirs, _, _ = beam_directions(rig)
    return dirs


def cell_angles(rig):
    theta = rig.azimuths
    phi = rig.elevations
    return theta, phi


def single_cell_image(rig, row, col, depth, pose=None):
    """Minimal image with one valid cell (testing and format fixtures)."""
    h, w = rig.channels, rig.width
    img = EquirectImage(np.full((h, w), np.nan), np.zeros((h, w, 3)),
                        np.full((h, w), IGNORE_LABEL, dtype=np.int64),
                        np.zeros((h, w)), np.zeros((h, w), dtype=bool),
                        pose if pose is not None else geometry.make_pose())
    img.depth[row, col] = depth
    img.valid[row, col] = True
    img.label[row, col] = 0
    return img


def spherical_cell_dir(rig, row, col):
    theta, phi = cell_angles(rig)
    return spherical_dir(theta[col], phi[row])
