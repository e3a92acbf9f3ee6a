"""Implicit scene representation: multi-resolution hash grid + small MLP.

The field maps a position x (and view direction v, color head only) to
density sigma, color c and per-class semantic logits s. Density and
semantics never see v. All parameters live in named float64 Tensors.
"""

import contextlib
from dataclasses import dataclass, field as _dcfield

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

N_CLASSES = 5


def level_resolutions(base, top, levels):
    """Geometric ladder of per-level grid resolutions from base to top."""
    if levels == 1:
        return np.array([base], dtype=np.int64)
    growth = (top / base) ** (1.0 / (levels - 1))
    res = np.rint(base * growth ** np.arange(levels)).astype(np.int64)
    res[0], res[-1] = base, top
    return res


@dataclass(frozen=True)
class FieldConfig:
    levels: int = 4
    base_resolution: int = 16        # 2^4
    max_resolution: int = 8192       # 2^13
    features_per_level: int = 2
    table_size: int = 2 ** 14
    bounds: np.ndarray = _dcfield(default_factory=lambda: np.array(
        [[-10.0, -10.0, 0.0], [10.0, 10.0, 6.0]]))
    hidden_layers: int = 2
    hidden_width: int = 64
    n_classes: int = N_CLASSES
    view_freqs: int = 4
    # fixed gain on the density head's pre-activation: softplus(gain * raw).
    # Adam steps are scale-normalized, so the gain sets how fast the raw
    # density can travel toward the sharp-surface regime; zero raw still
    # gives softplus(0) = ln 2.
    density_gain: float = 10.0

    def __post_init__(self):
        if self.table_size < 2 ** 10 or self.table_size & (self.table_size - 1):
            raise ValueError(f"table_size must be a power of two >= 1024, got {self.table_size}")
        if self.max_resolution < self.base_resolution:
            raise ValueError("max_resolution must be >= base_resolution")
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=np.float64))

    @property
    def resolutions(self):
        return level_resolutions(self.base_resolution, self.max_resolution, self.levels)

    @property
    def feature_dim(self):
        return self.levels * self.features_per_level

    @property
    def view_dim(self):
        return 3 + 6 * self.view_freqs


class ImplicitField:
    """Hash-grid tables plus MLP trunk and (sigma, color, semantics) heads."""

    def __init__(self, config, params, frozen=False):
        self.config = config
        self.params = params  # ordered name -> Tensor
        self.frozen = frozen

    def named_params(self):
        return list(self.params.items())

    def param_count(self):
        return sum(int(t.value.size) for t in self.params.values())

    def set_trainable(self, flag):
        if self.frozen and flag:
            raise ValueError("field is frozen; cannot re-enable training")
        for t in self.params.values():
            t.requires_grad = flag

    def freeze(self):
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False

    @contextlib.contextmanager
    def no_grad(self):
        """Temporarily detach parameters so rendering builds no graph."""
        flags = [t.requires_grad for t in self.params.values()]
        for t in self.params.values():
            t.requires_grad = False
        try:
            yield
        finally:
            for t, f in zip(self.params.values(), flags):
                t.requires_grad = f

    def state_hash(self):
        import hashlib
        h = hashlib.sha256()
        for name, t in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.value).tobytes())
        return h.hexdigest()


def expected_param_count(config):
    """Closed-form parameter count for a given configuration."""
    c = config
    n = c.levels * c.table_size * c.features_per_level
    width, fan = c.hidden_width, c.feature_dim
    for _ in range(c.hidden_layers):
        n += fan * width + width
        fan = width
    n += fan * 1 + 1                      # sigma head
    n += fan * c.n_classes + c.n_classes  # semantic head
    n += (fan + c.view_dim) * 3 + 3       # color head sees the view encoding
    return n


def init_field(config, seed):
    """Deterministic initialization: tiny uniform grid, 1/sqrt(fan-in) MLP."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xF1E1D)))
    params = {}
    params["grid"] = Tensor(rng.uniform(
        -1e-4, 1e-4, size=(config.levels, config.table_size, config.features_per_level)),
        requires_grad=True)

    def linear(name, fan_in, fan_out):
        params[f"{name}.w"] = Tensor(rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in),
                                     requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    fan = config.feature_dim
    for i in range(config.hidden_layers):
        linear(f"trunk{i}", fan, config.hidden_width)
        fan = config.hidden_width
    linear("sigma", fan, 1)
    linear("sem", fan, config.n_classes)
    linear("color", fan + config.view_dim, 3)
    # zero the view-encoding rows so a fresh field renders ~0.5 gray and
    # view dependence is learned rather than injected by init noise
    params["color.w"].value[fan:, :] = 0.0
    return ImplicitField(config, params)


def normalize_points(config, x):
    """Map world points into [0,1]^3, clamping and flagging out-of-bounds."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("non-finite query point")
    lo, hi = config.bounds
    x01 = (x - lo) / (hi - lo)
    oob = (x01 < 0.0) | (x01 > 1.0)
    return np.clip(x01, 0.0, 1.0), oob.any(axis=-1)


def hash_encode(field, x):
    """Interpolated grid features for points x (P,3); returns (features, oob)."""
    x01, oob = normalize_points(field.config, x)
    feats = ad.hash_grid_interp(field.params["grid"], x01, field.config.resolutions)
    return feats, oob


def view_encoding(v, freqs):
    """Sinusoidal direction encoding [v, sin(2^k v), cos(2^k v)], k < freqs."""
    v = np.asarray(v, dtype=np.float64)
    parts = [v]
    for k in range(freqs):
        parts.append(np.sin((2.0 ** k) * v))
        parts.append(np.cos((2.0 ** k) * v))
    return np.concatenate(parts, axis=-1)


def field_query(field, x, v, view_enc=None, need_color=True):
    """Evaluate the field: returns (sigma (P,), color (P,3), logits (P,K)).

    v must be unit length; it feeds only the color head, so density and
    semantics are view-independent by construction. view_enc may carry a
    precomputed encoding (directions constant along a ray); need_color
    skips the color head for depth/semantics-only renders (color None).
    """
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1)
    bad = np.abs(norms - 1.0) > 1e-6
    if bad.any():
        raise ValueError(f"view direction is not unit length (norm {norms[bad].flat[0]:.9f})")
    h, _ = hash_encode(field, x)
    for i in range(field.config.hidden_layers):
        h = ad.relu(ad.matmul(h, field.params[f"trunk{i}.w"]) + field.params[f"trunk{i}.b"])
    sigma = ad.softplus(ad.mul(ad.reshape(
        ad.matmul(h, field.params["sigma.w"]) + field.params["sigma.b"], (-1,)),
        field.config.density_gain))
    logits = ad.matmul(h, field.params["sem.w"]) + field.params["sem.b"]
    color = None
    if need_color:
        if view_enc is None:
            view_enc = view_encoding(v, field.config.view_freqs)
        color = ad.sigmoid(ad.matmul(ad.concat([h, Tensor(view_enc)], axis=1),
                                     field.params["color.w"]) + field.params["color.b"])
    return sigma, color, logits
