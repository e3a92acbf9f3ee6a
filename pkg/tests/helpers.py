"""Shared test fixtures and independent verification oracles.

The oracles here (brute-force ray march, high-resolution quadrature of
the rendering integrals) deliberately avoid the library's own code paths
so they can certify them.
"""

import numpy as np

from lidarfield.oracle import CLASS_NAMES, Primitive, SceneConfig, build_scene

ROAD = CLASS_NAMES.index("road")
VEHICLE = CLASS_NAMES.index("vehicle")
TERRAIN = CLASS_NAMES.index("terrain")
VEGETATION = CLASS_NAMES.index("vegetation")
MANMADE = CLASS_NAMES.index("manmade")


def plane_only_scene(half=10.0, zmax=6.0, seed=0):
    cfg = SceneConfig(
        primitives=[Primitive("plane", ROAD, (0.35, 0.33, 0.3))],
        bounds=[[-half, -half, 0.0], [half, half, zmax]],
        seed=seed, allow_absent_classes=True)
    return build_scene(cfg)


def three_primitive_scene(half=10.0, zmax=6.0, seed=0):
    """Ground plane + vehicle box + vegetation sphere (desk-scale default)."""
    cfg = SceneConfig(
        primitives=[
            Primitive("plane", ROAD, (0.35, 0.33, 0.30)),
            Primitive("box", VEHICLE, (0.20, 0.25, 0.75),
                      center=(3.0, 1.0, 0.75), size=(3.6, 1.8, 1.5)),
            Primitive("sphere", VEGETATION, (0.15, 0.55, 0.20),
                      center=(-3.0, -2.5, 1.2), radius=1.2),
        ],
        bounds=[[-half, -half, 0.0], [half, half, zmax]],
        seed=seed, allow_absent_classes=True)
    return build_scene(cfg)


def full_class_scene(seed=0):
    """All five classes present (plane + boxes + sphere)."""
    cfg = SceneConfig(
        primitives=[
            Primitive("plane", ROAD, (0.35, 0.33, 0.30)),
            Primitive("box", VEHICLE, (0.2, 0.25, 0.75), center=(3.0, 1.0, 0.75),
                      size=(3.6, 1.8, 1.5)),
            Primitive("box", TERRAIN, (0.45, 0.4, 0.25), center=(-4.0, 4.0, 0.2),
                      size=(5.0, 4.0, 0.4)),
            Primitive("sphere", VEGETATION, (0.15, 0.55, 0.2), center=(-3.0, -2.5, 1.2),
                      radius=1.2),
            Primitive("box", MANMADE, (0.55, 0.55, 0.6), center=(5.5, -4.0, 1.25),
                      size=(1.0, 1.0, 2.5)),
        ],
        bounds=[[-10.0, -10.0, 0.0], [10.0, 10.0, 6.0]],
        seed=seed)
    return build_scene(cfg)


def ray_march_depth(scene, origin, direction, t_max, step=1e-4):
    """Brute-force first-hit depth by constant-step marching.

    Boxes/spheres are detected by point-inside tests, the ground plane by
    a z sign change with footprint check. Returns np.inf when nothing is
    hit before t_max. Accuracy: within one step of the true depth.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    lo, hi = scene.bounds
    chunk = 4096
    n_steps = int(np.ceil(t_max / step))
    prev_z = origin[2]
    for s in range(0, n_steps, chunk):
        t = (np.arange(s, min(s + chunk, n_steps)) + 1) * step
        p = origin[None, :] + t[:, None] * direction[None, :]
        inside = np.zeros(t.shape[0], dtype=bool)
        for prim in scene.primitives:
            if prim.kind == "box":
                bmin, bmax = prim.center - prim.size / 2, prim.center + prim.size / 2
                inside |= ((p >= bmin) & (p <= bmax)).all(axis=1)
            elif prim.kind == "sphere":
                inside |= ((p - prim.center) ** 2).sum(axis=1) <= prim.radius ** 2
            else:
                z = np.concatenate([[prev_z], p[:, 2]])
                crossed = (np.sign(z[:-1]) != np.sign(z[1:])) | (z[1:] == 0.0)
                in_foot = (p[:, 0] >= lo[0]) & (p[:, 0] <= hi[0]) \
                    & (p[:, 1] >= lo[1]) & (p[:, 1] <= hi[1])
                inside |= crossed & in_foot
        if inside.any():
            return float(t[np.argmax(inside)])
        prev_z = p[-1, 2]
    return np.inf


def quadrature_render(sigma_fn, value_fns, t0, t1, n=1_000_000):
    """High-resolution midpoint quadrature of the rendering integrals.

    Returns (acc, integrals...) where each integral is
    int T(t) sigma(t) value(t) dt with T(t) = exp(-int_{t0}^t sigma).
    """
    t = np.linspace(t0, t1, n + 1)
    mid = 0.5 * (t[:-1] + t[1:])
    dt = np.diff(t)
    sig = sigma_fn(mid)
    optical = np.concatenate([[0.0], np.cumsum(sig * dt)])
    trans_mid = np.exp(-(optical[:-1] + optical[1:]) / 2.0)
    acc = 1.0 - np.exp(-optical[-1])
    outs = []
    for fn in value_fns:
        outs.append(float(np.sum(trans_mid * sig * fn(mid) * dt)))
    return acc, outs
