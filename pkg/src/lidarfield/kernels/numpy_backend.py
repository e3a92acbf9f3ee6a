"""Pure-numpy implementations of the hot kernels.

Semantics match ``lidarfield.kernels._core`` (the compiled core); the
backend in use is chosen once at import time by ``lidarfield.kernels``.
"""

import numpy as np

# Spatial hash: XOR of per-axis corner indices times fixed large primes,
# reduced modulo the (power-of-two) table size.
HASH_PRIMES = (1, 2654435761, 805459861)


def corner_weights(x01, res, table_size):
    """Corner table indices and trilinear weights for one grid level.

    x01 : (P, 3) float64 coordinates in [0, 1]^3.
    res : grid resolution (cells per axis) for this level.
    Returns ((P, 8) int64 indices into the hash table, (P, 8) weights).
    Weights of the 8 corners sum to 1 for every point.
    """
    pos = x01 * float(res)
    i0f = np.minimum(np.floor(pos), res - 1.0)
    frac = pos - i0f
    i0 = i0f.astype(np.uint64)
    mask = np.uint64(table_size - 1)
    p0, p1, p2 = (np.uint64(p) for p in HASH_PRIMES)
    one = np.uint64(1)

    P = x01.shape[0]
    idx = np.empty((P, 8), dtype=np.int64)
    w = np.empty((P, 8), dtype=np.float64)
    for c in range(8):
        bx, by, bz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        h = (i0[:, 0] + (one if bx else np.uint64(0))) * p0
        h = h ^ (i0[:, 1] + (one if by else np.uint64(0))) * p1
        h = h ^ (i0[:, 2] + (one if bz else np.uint64(0))) * p2
        idx[:, c] = (h & mask).astype(np.int64)
        wx = frac[:, 0] if bx else 1.0 - frac[:, 0]
        wy = frac[:, 1] if by else 1.0 - frac[:, 1]
        wz = frac[:, 2] if bz else 1.0 - frac[:, 2]
        w[:, c] = wx * wy * wz
    return idx, w


def hash_grid_forward(tables, x01, res):
    """Multi-level trilinear hash-grid interpolation.

    tables : (L, T, F) float64 feature tables, T a power of two.
    x01    : (P, 3) coordinates normalized to [0, 1]^3.
    res    : (L,) per-level resolutions.
    Returns (P, L*F) interpolated features, level-major.
    """
    L, T, F = tables.shape
    out = np.empty((x01.shape[0], L * F), dtype=np.float64)
    for level in range(L):
        idx, w = corner_weights(x01, int(res[level]), T)
        gathered = tables[level][idx]  # (P, 8, F)
        out[:, level * F:(level + 1) * F] = (gathered * w[:, :, None]).sum(axis=1)
    return out


def hash_grid_backward(gout, x01, res, shape):
    """Gradient of hash_grid_forward w.r.t. the tables (scatter-add)."""
    L, T, F = shape
    gtables = np.zeros((L, T, F), dtype=np.float64)
    for level in range(L):
        idx, w = corner_weights(x01, int(res[level]), T)
        go = gout[:, level * F:(level + 1) * F]  # (P, F)
        wg = w[:, :, None] * go[:, None, :]      # (P, 8, F)
        flat = idx.ravel()
        for f in range(F):
            gtables[level, :, f] = np.bincount(
                flat, weights=wg[:, :, f].ravel(), minlength=T
            )
    return gtables


def composite_weights_forward(sdelta):
    """Volume-rendering weights from per-sample density-times-spacing.

    sdelta : (R, N) nonnegative sigma_i * delta_i along each ray.
    Returns (w, trans): w_i = T_i (1 - exp(-sdelta_i)) and the
    transmittance T_i = exp(-sum_{j<i} sdelta_j).
    """
    cum = np.cumsum(sdelta, axis=-1)
    trans = np.exp(sdelta - cum)  # exp(-exclusive cumsum)
    alpha = -np.expm1(-sdelta)
    return trans * alpha, trans


def composite_weights_backward(g, sdelta, w, trans):
    """Gradient of the weights w.r.t. sdelta.

    dw_i/dx_i = T_i exp(-x_i); dw_i/dx_j = -w_i for j < i.
    """
    gw = g * w
    suffix = np.flip(np.cumsum(np.flip(gw, -1), -1), -1)  # sum_{i>=j} g_i w_i
    return g * trans * np.exp(-sdelta) - (suffix - gw)
