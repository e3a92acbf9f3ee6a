"""Volume rendering: stratified ray sampling and transmittance compositing.

Composites color, depth and semantic logits with the same weights
w_i = T_i (1 - exp(-sigma_i delta_i)). The rendered depth is the
un-normalized weighted sum of sample depths; normalization by the
accumulated opacity happens only in classify_return.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .field import field_query


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction is not unit length (norm {n:.12f})")
        if not 0.0 <= self.t_near < self.t_far:
            raise ValueError(f"require 0 <= t_near < t_far, got [{self.t_near}, {self.t_far}]")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


@dataclass
class RenderResult:
    """Per-ray composited outputs; fields are Tensors when a graph is live."""
    color: object   # (R, 3)
    depth: object   # (R,)
    logits: object  # (R, K)
    acc: object     # (R,)
    weights: object  # (R, N)
    t: np.ndarray    # (R, N) sample depths

    def values(self):
        def v(x):
            return x.value if isinstance(x, Tensor) else x
        return RenderResult(v(self.color), v(self.depth), v(self.logits),
                            v(self.acc), v(self.weights), self.t)


def sample_rays(t_near, t_far, n, seed=0, jitter=True):
    """Stratified samples: one uniform draw per bin of [t_near, t_far].

    t_near/t_far may be scalars or (R,) arrays. jitter=False puts every
    sample at its bin midpoint. Returns (t (R,N), delta (R,N)) where the
    last spacing is t_far - t_N.
    """
    if n < 2:
        raise ValueError(f"need at least 2 samples per ray, got {n}")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    r = t_near.shape[0]
    if jitter:
        u = np.random.default_rng(seed).uniform(size=(r, n))
    else:
        u = np.full((r, n), 0.5)
    frac = (np.arange(n) + u) / n
    t = t_near[:, None] + (t_far - t_near)[:, None] * frac
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = t_far - t[:, -1]
    return t, delta


def sample_ray(ray, n, seed=0, jitter=True):
    """Single-ray convenience wrapper around sample_rays."""
    t, delta = sample_rays(ray.t_near, ray.t_far, n, seed=seed, jitter=jitter)
    return t[0], delta[0]


def composite(t, delta, sigma, color, logits):
    """Composite per-sample quantities into a RenderResult.

    t, delta : (R, N) arrays. sigma (R,N), color (R,N,3) or None,
    logits (R,N,K) may be Tensors; the result is then differentiable
    w.r.t. them.
    """
    t = np.asarray(t, dtype=np.float64)
    sdelta = ad.mul(ad.as_tensor(sigma), Tensor(delta))
    w = ad.composite_weights(sdelta)
    acc = ad.reduce_sum(w, axis=1)
    depth = ad.reduce_sum(ad.mul(w, Tensor(t)), axis=1)
    r, n = t.shape
    w3 = ad.reshape(w, (r, n, 1))
    out_color = None if color is None \
        else ad.reduce_sum(ad.mul(w3, ad.as_tensor(color)), axis=1)
    out_logits = ad.reduce_sum(ad.mul(w3, ad.as_tensor(logits)), axis=1)
    return RenderResult(out_color, depth, out_logits, acc, w, t)


def render_rays(fld, origins, dirs, t_near, t_far, n_samples=128, seed=0, jitter=True,
                need_color=True):
    """Render a batch of rays against the field (graph-free if detached)."""
    from .field import view_encoding
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    t, delta = sample_rays(t_near, t_far, n_samples, seed=seed, jitter=jitter)
    r, n = t.shape
    x = (origins[:, None, :] + t[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    v = np.repeat(dirs, n, axis=0)
    venc = None
    if need_color:
        venc = np.repeat(view_encoding(dirs, fld.config.view_freqs), n, axis=0)
    sigma, color, logits = field_query(fld, x, v, view_enc=venc, need_color=need_color)
    k = logits.value.shape[-1]
    return composite(t, delta,
                     ad.reshape(sigma, (r, n)),
                     None if color is None else ad.reshape(color, (r, n, 3)),
                     ad.reshape(logits, (r, n, k)))


def render_ray(fld, ray, n_samples=128, seed=0, jitter=True):
    """Render one Ray; see render_rays."""
    return render_rays(fld, ray.origin[None], ray.direction[None],
                       np.array([ray.t_near]), np.array([ray.t_far]),
                       n_samples=n_samples, seed=seed, jitter=jitter)


def classify_return(result, tau_acc):
    """Split rays into returns and no-returns by accumulated opacity.

    Returns (returned (R,) bool, range (R,) with NaN on no-returns).
    The range is the opacity-normalized expected depth.
    """
    if not 0.0 < tau_acc < 1.0:
        raise ValueError(f"tau_acc must lie in (0, 1), got {tau_acc}")
    res = result.values()
    returned = res.acc >= tau_acc
    rng = np.full_like(res.depth, np.nan)
    rng[returned] = res.depth[returned] / res.acc[returned]
    return returned, rng
