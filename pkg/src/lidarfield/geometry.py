"""Shared geometry: poses as (3,4) [R|t] row-major, rays, AABB clipping."""

import numpy as np


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_pose(rotation=None, translation=(0.0, 0.0, 0.0)):
    pose = np.zeros((3, 4))
    pose[:, :3] = np.eye(3) if rotation is None else rotation
    pose[:, 3] = translation
    return pose


def check_rotation(pose, what="pose"):
    det = np.linalg.det(np.asarray(pose)[:3, :3])
    if abs(det) < 1e-6:
        raise ValueError(f"degenerate {what}: rotation determinant {det:.3e} is ~0")


def pose_apply(pose, pts):
    """Map points (..., 3) from local to world frame."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ pose[:, :3].T + pose[:, 3]


def pose_inverse(pose):
    rinv = pose[:, :3].T
    return make_pose(rinv, -rinv @ pose[:, 3])


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose: +z forward toward target, +x right, +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = unit(np.asarray(target, dtype=np.float64) - eye)
    right = np.cross(fwd, unit(up))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
    right = unit(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)
    return make_pose(rot, eye)


def ray_aabb(origins, dirs, lo, hi):
    """Entry/exit distances of rays against an axis-aligned box.

    Returns (t_enter, t_exit); rays miss the box where t_enter > t_exit.
    Zero direction components are handled by the IEEE inf convention.
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    near = np.minimum(t0, t1)
    far = np.maximum(t0, t1)
    tmin = np.where(np.isnan(near), -np.inf, near)
    tmax = np.where(np.isnan(far), np.inf, far)
    return tmin.max(axis=-1), tmax.min(axis=-1)
