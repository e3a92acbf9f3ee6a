"""Analytic oracle scenes: exact geometry, labels, shading and raydrop.

A scene is a small set of primitives (one ground plane, boxes, spheres)
with exact ray intersections. It supplies training images/scans and the
ground truth every metric is scored against. Scene evaluation is pure;
randomness only enters through explicitly seeded label corruption and
the synthetic raydrop rule.
"""

from dataclasses import dataclass, field as _dcfield

import numpy as np

from . import geometry
from .lidar import IGNORE_LABEL, LidarScan, beam_directions, column_origins, ego_origin

CLASS_NAMES = ("road", "vehicle", "terrain", "vegetation", "manmade")
N_CLASSES = len(CLASS_NAMES)

SKY_COLOR = np.array([0.62, 0.76, 0.92])
# fixed directional light (toward the light) and an ambient floor so every
# visible surface keeps a non-zero, geometry-dependent shade
LIGHT_DIR = geometry.unit((0.4, -0.25, 0.88))
AMBIENT = 0.25


@dataclass(frozen=True)
class Primitive:
    kind: str            # plane | box | sphere
    class_id: int
    color: np.ndarray    # base albedo in [0,1]^3
    center: np.ndarray = _dcfield(default_factory=lambda: np.zeros(3))
    size: np.ndarray = _dcfield(default_factory=lambda: np.zeros(3))  # box full extents
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("plane", "box", "sphere"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if not 0 <= self.class_id < N_CLASSES:
            raise ValueError(f"class index {self.class_id} outside [0, {N_CLASSES})")
        for name in ("color", "center", "size"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))


@dataclass(frozen=True)
class SceneConfig:
    primitives: tuple
    bounds: np.ndarray
    seed: int = 0
    allow_absent_classes: bool = False

    def __post_init__(self):
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=np.float64))
        object.__setattr__(self, "primitives", tuple(self.primitives))


@dataclass(frozen=True)
class OracleScene:
    primitives: tuple
    bounds: np.ndarray
    seed: int

    @property
    def diag(self):
        return float(np.linalg.norm(self.bounds[1] - self.bounds[0]))


@dataclass
class Hit:
    hit: bool
    depth: float = np.nan
    class_id: int = IGNORE_LABEL
    color: np.ndarray = None
    normal: np.ndarray = None


@dataclass(frozen=True)
class RaydropRule:
    """Synthetic drop process standing in for reflectance physics.

    A beam is dropped if its incidence angle exceeds the threshold, OR a
    per-class Bernoulli fires, OR a range-falloff Bernoulli fires with
    probability p_max * clip(range / r0, 0, 1).
    """
    incidence_threshold: float = np.radians(80.0)
    per_class_drop_prob: np.ndarray = _dcfield(default_factory=lambda: np.zeros(N_CLASSES))
    range_r0: float = 25.0
    range_p_max: float = 0.0
    seed: int = 0

    def __post_init__(self):
        p = np.asarray(self.per_class_drop_prob, dtype=np.float64)
        if p.shape != (N_CLASSES,) or (p < 0).any() or (p > 1).any():
            raise ValueError("per_class_drop_prob must be 5 probabilities in [0,1]")
        object.__setattr__(self, "per_class_drop_prob", p)


def build_scene(config):
    """Validate a SceneConfig and return the immutable scene.

    Requires exactly one ground plane (class road, z=0), every primitive
    inside bounds, and all five classes present unless explicitly allowed
    absent.
    """
    lo, hi = config.bounds
    planes = [p for p in config.primitives if p.kind == "plane"]
    if len(planes) != 1:
        raise ValueError(f"scene needs exactly one ground plane, got {len(planes)}")
    if planes[0].class_id != CLASS_NAMES.index("road"):
        raise ValueError("the ground plane must carry the road class")
    for i, p in enumerate(config.primitives):
        if p.kind == "box":
            bmin, bmax = p.center - p.size / 2, p.center + p.size / 2
            if (bmin < lo).any() or (bmax > hi).any():
                raise ValueError(f"primitive {i} (box, class {CLASS_NAMES[p.class_id]}) "
                                 f"extends outside bounds")
        elif p.kind == "sphere":
            if ((p.center - p.radius) < lo).any() or ((p.center + p.radius) > hi).any():
                raise ValueError(f"primitive {i} (sphere, class {CLASS_NAMES[p.class_id]}) "
                                 f"extends outside bounds")
    present = {p.class_id for p in config.primitives}
    if not config.allow_absent_classes and present != set(range(N_CLASSES)):
        missing = [CLASS_NAMES[c] for c in sorted(set(range(N_CLASSES)) - present)]
        raise ValueError(f"classes absent from scene: {missing} "
                         f"(set allow_absent_classes to accept)")
    return OracleScene(config.primitives, config.bounds.copy(), config.seed)


# ---------------------------------------------------------------------------
# exact intersections (vectorized over rays)

def _hit_plane(prim, bounds, origins, dirs):
    lo, hi = bounds
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origins[:, 2] / dirs[:, 2]
    px = origins[:, 0] + t * dirs[:, 0]
    py = origins[:, 1] + t * dirs[:, 1]
    ok = np.isfinite(t) & (t > 1e-9) \
        & (px >= lo[0]) & (px <= hi[0]) & (py >= lo[1]) & (py <= hi[1])
    t = np.where(ok, t, np.inf)
    normals = np.broadcast_to(np.array([0.0, 0.0, 1.0]), origins.shape)
    return t, normals


def _hit_box(prim, origins, dirs):
    bmin = prim.center - prim.size / 2
    bmax = prim.center + prim.size / 2
    t_enter, t_exit = geometry.ray_aabb(origins, dirs, bmin, bmax)
    ok = (t_enter <= t_exit) & (t_exit > 1e-9)
    t = np.where(t_enter > 1e-9, t_enter, t_exit)  # exit face if origin inside
    t = np.where(ok, t, np.inf)
    p = origins + t[:, None] * dirs
    rel = (p - prim.center) / (prim.size / 2)
    face = np.abs(rel).argmax(axis=1)
    normals = np.zeros_like(origins)
    rows = np.arange(origins.shape[0])
    normals[rows, face] = np.sign(rel[rows, face])
    return t, normals


def _hit_sphere(prim, origins, dirs):
    oc = origins - prim.center
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - prim.radius ** 2
    disc = b * b - c
    sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
    t1, t2 = -b - sqrt_disc, -b + sqrt_disc
    t = np.where(t1 > 1e-9, t1, t2)
    t = np.where((disc >= 0.0) & (t > 1e-9), t, np.inf)
    p = origins + t[:, None] * dirs
    normals = (p - prim.center) / prim.radius
    return t, normals


def intersect_rays(scene, origins, dirs):
    """Nearest-hit query for a batch of rays.

    Returns dict with depth (inf on miss), class_id, color (base albedo),
    normal, hit. Directions must be unit length within 1e-9.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    norms = np.linalg.norm(dirs, axis=1)
    bad = np.abs(norms - 1.0) > 1e-9
    if bad.any():
        raise ValueError(f"ray direction is not unit length (norm {norms[bad][0]:.12f})")

    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    class_id = np.full(n, IGNORE_LABEL, dtype=np.int64)
    color = np.zeros((n, 3))
    normal = np.zeros((n, 3))
    for prim in scene.primitives:
        if prim.kind == "plane":
            t, nrm = _hit_plane(prim, scene.bounds, origins, dirs)
        elif prim.kind == "box":
            t, nrm = _hit_box(prim, origins, dirs)
        else:
            t, nrm = _hit_sphere(prim, origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        class_id[closer] = prim.class_id
        color[closer] = prim.color
        normal[closer] = nrm[closer]
    return {"depth": best_t, "class_id": class_id, "color": color,
            "normal": normal, "hit": np.isfinite(best_t)}


def intersect(scene, origin, direction):
    """Single-ray wrapper over intersect_rays, returning a Hit."""
    res = intersect_rays(scene, origin, direction)
    if not res["hit"][0]:
        return Hit(hit=False)
    return Hit(hit=True, depth=float(res["depth"][0]), class_id=int(res["class_id"][0]),
               color=res["color"][0], normal=res["normal"][0])


def shade(base_color, normal):
    """Fixed-light Lambert shading with an ambient floor."""
    lam = np.maximum(normal @ LIGHT_DIR, 0.0)
    return base_color * (AMBIENT + (1.0 - AMBIENT) * lam)[..., None]


# ---------------------------------------------------------------------------
# training-data synthesis

def camera_rays(pose, intrinsics, width, height):
    """World-frame pixel rays for a pinhole camera (+z forward, +y down)."""
    geometry.check_rotation(pose, "camera pose")
    fx, fy, cx, cy = intrinsics
    u = (np.arange(width) + 0.5 - cx) / fx
    v = (np.arange(height) + 0.5 - cy) / fy
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_world = d_cam @ pose[:, :3].T
    origins = np.broadcast_to(pose[:, 3], d_world.shape)
    return origins.reshape(-1, 3), d_world.reshape(-1, 3)


def render_oracle_camera(scene, pose, intrinsics, width, height):
    """Exact camera render: (color (H,W,3), labels (H,W), depth (H,W)).

    Misses get the sky color, the ignore label and infinite depth.
    """
    if width < 8 or height < 8:
        raise ValueError(f"image must be at least 8x8, got {width}x{height}")
    origins, dirs = camera_rays(pose, intrinsics, width, height)
    res = intersect_rays(scene, origins, dirs)
    color = np.where(res["hit"][:, None], shade(res["color"], res["normal"]), SKY_COLOR)
    return (color.reshape(height, width, 3),
            res["class_id"].reshape(height, width),
            res["depth"].reshape(height, width))


def sample_oracle_lidar(scene, rig, ego, t0=0.0, rolling_shutter=False, frame_id=0):
    """Exact LiDAR sweep: one intersection per beam, normals retained."""
    origin = ego.origin + t0 * ego.velocity
    dirs, _, _ = beam_directions(rig)
    h, w = rig.channels, rig.width
    cols = column_origins(rig, origin, ego.velocity, rolling_shutter)
    origins = np.broadcast_to(cols[None, :, :], (h, w, 3)).reshape(-1, 3)
    flat_dirs = dirs.reshape(-1, 3)
    res = intersect_rays(scene, origins, flat_dirs)

    valid = res["hit"]
    ranges = np.where(valid, res["depth"], np.nan)
    points = np.zeros((h * w, 3))
    points[valid] = origins[valid] + ranges[valid, None] * flat_dirs[valid]
    colors = np.zeros((h * w, 3))
    colors[valid] = shade(res["color"][valid], res["normal"][valid])
    labels = np.where(valid, res["class_id"], IGNORE_LABEL)
    pose = geometry.make_pose(translation=origin + rig.mount)
    return LidarScan(points.reshape(h, w, 3), labels.reshape(h, w).astype(np.int64),
                     valid.reshape(h, w), colors.reshape(h, w, 3),
                     ranges.reshape(h, w), pose, frame_id,
                     normals=res["normal"].reshape(h, w, 3))


def corrupt_labels(label_map, rate, seed):
    """Independently flip each labeled pixel to a random other class.

    Ignore-labeled pixels are untouched; deterministic per seed.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0,1], got {rate}")
    labels = np.asarray(label_map)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC0552)))
    flip = (rng.uniform(size=labels.shape) < rate) & (labels != IGNORE_LABEL)
    offset = rng.integers(1, N_CLASSES, size=labels.shape)
    out = labels.copy()
    out[flip] = (labels[flip] + offset[flip]) % N_CLASSES
    return out


def apply_synthetic_raydrop(scan, rule, rig):
    """AND the scan's validity with the rule's keep decisions."""
    drop = raydrop_rule_mask(scan, rule, rig)
    return scan.with_validity(scan.valid & ~drop)


def raydrop_rule_mask(scan, rule, rig):
    """Drop mask (True = dropped) among currently valid beams."""
    if scan.normals is None:
        raise ValueError("raydrop rule needs oracle normals on the scan")
    dirs, _, _ = beam_directions(rig)
    cos_inc = np.abs(np.einsum("hwc,hwc->hw", dirs, scan.normals))
    incidence_drop = cos_inc < np.cos(rule.incidence_threshold)

    rng = np.random.default_rng(np.random.SeedSequence((int(rule.seed), int(scan.frame_id), 0xD209)))
    u_class = rng.uniform(size=scan.valid.shape)
    u_range = rng.uniform(size=scan.valid.shape)
    class_p = np.zeros(scan.valid.shape)
    labeled = scan.labels < N_CLASSES
    class_p[labeled] = rule.per_class_drop_prob[scan.labels[labeled]]
    class_drop = u_class < class_p
    with np.errstate(invalid="ignore"):
        range_p = rule.range_p_max * np.clip(scan.ranges / rule.range_r0, 0.0, 1.0)
    range_drop = u_range < np.nan_to_num(range_p)
    return scan.valid & (incidence_drop | class_drop | range_drop)
