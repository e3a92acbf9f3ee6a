"""Learned raydrop: per-cell keep/drop over the equirectangular image.

A U-Net consumes the simulated image's channels (depth, RGB, one-hot
labels including the no-return class, depth variance, validity) and
emits one keep-logit per cell. Training samples hard binary masks via
straight-through gumbel-softmax; inference thresholds at 0.5 so refined
scans are reproducible.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Tensor
from .field import N_CLASSES
from .lidar import IGNORE_LABEL, beam_directions

UNET_IN_CHANNELS = 1 + 3 + (N_CLASSES + 1) + 1 + 1  # depth,rgb,onehot,var,valid
PYRAMID_LEVELS = 4
PYRAMID_WEIGHTS = tuple(2.0 ** (k - PYRAMID_LEVELS) for k in range(1, PYRAMID_LEVELS + 1))
DEPTH_SCALE = 0.1  # meters -> net input units


class RaydropNet:
    """U-Net parameters plus the fixed input-channel contract."""

    def __init__(self, params):
        self.params = params

    @classmethod
    def init(cls, seed):
        return cls(nets.init_unet_params(seed, UNET_IN_CHANNELS))

    def named_params(self):
        return list(self.params.items())

    def set_trainable(self, flag):
        for t in self.params.values():
            t.requires_grad = flag


@dataclass
class RaydropMask:
    probabilities: np.ndarray  # keep probability per cell
    hard: np.ndarray           # boolean keep decisions
    temperature: float
    keep: object = None        # straight-through Tensor, training only


def unet_channels(img):
    """Assemble the fixed channel stack (H, W, 12) from an equirect image."""
    h, w = img.shape
    depth = np.nan_to_num(img.depth, nan=0.0) * DEPTH_SCALE
    onehot = np.zeros((h, w, N_CLASSES + 1))
    labels = np.where(img.label <= IGNORE_LABEL, img.label, IGNORE_LABEL)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return np.concatenate([depth[..., None], img.color, onehot,
                           img.variance[..., None], img.valid[..., None].astype(float)],
                          axis=-1)


def probe_channels(img, rig):
    """Geometry-only channel stack (H, W, 5): depth, xyz (sensor frame), valid."""
    dirs, _, _ = beam_directions(rig)
    depth = np.nan_to_num(img.depth, nan=0.0)
    xyz = depth[..., None] * dirs
    return np.concatenate([depth[..., None] * DEPTH_SCALE, xyz * DEPTH_SCALE,
                           img.valid[..., None].astype(float)], axis=-1)


def raydrop_forward(net, channels):
    """Keep-logits for a batch of channel stacks (B,H,W,12) -> (B,H,W)."""
    x = ad.as_tensor(channels)
    if x.value.ndim == 3:
        x = ad.reshape(x, (1,) + x.value.shape)
    if x.value.shape[-1] != UNET_IN_CHANNELS:
        raise ValueError(f"raydrop input must have {UNET_IN_CHANNELS} channels, "
                         f"got {x.value.shape[-1]}")
    return nets.unet_logits(net.params, x)


def gumbel_sample(logits, tau, seed):
    """Straight-through binary sample: hard keep mask, soft gradients.

    logits may be a Tensor of any shape; one (keep, drop) gumbel-softmax
    runs per cell. Deterministic given the seed.
    """
    logits = ad.as_tensor(logits)
    shape = logits.value.shape
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x6B1)))
    noise = rng.gumbel(size=shape + (2,))
    two = ad.concat([ad.reshape(logits, shape + (1,)),
                     Tensor(np.zeros(shape + (1,)))], axis=-1)
    y = ad.gumbel_softmax(two, noise, tau, hard=True)
    keep = ad.reduce_sum(ad.mul(y, Tensor(np.array([1.0, 0.0]))), axis=-1)
    probs = _sigmoid_np(logits.value)
    return RaydropMask(probs, keep.value.astype(bool), float(tau), keep)


def inference_mask(logits_value, threshold=0.5):
    """Deterministic mask for simulation: keep where p(keep) >= threshold."""
    probs = _sigmoid_np(np.asarray(logits_value))
    return RaydropMask(probs, probs >= threshold, 0.0)


def _sigmoid_np(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mask_loss(logits, gt_mask, domain):
    """Mean binary cross-entropy between keep-probabilities and the target
    mask, restricted to domain (the sim-valid cells)."""
    domain = np.asarray(domain, dtype=bool)
    n = int(domain.sum())
    if n == 0:
        raise ValueError("mask loss domain is empty (no sim-valid cells)")
    m = np.asarray(gt_mask, dtype=np.float64)
    if m.shape != logits.value.shape or domain.shape != m.shape:
        raise ValueError(f"mask loss shapes disagree: logits {logits.value.shape}, "
                         f"mask {m.shape}, domain {domain.shape}")
    per_cell = ad.sub(ad.softplus(logits), ad.mul(Tensor(m), logits))
    return ad.mul(ad.reduce_sum(ad.mul(per_cell, Tensor(domain.astype(float)))), 1.0 / n)


class FeaturePyramid:
    """Frozen 4-level feature extractor over probe channel stacks."""

    def __init__(self, params, kind, probe_heldout_accuracy=None):
        if PYRAMID_LEVELS != 4:
            raise ValueError("pyramid is defined with 4 levels")
        self.params = {k: Tensor(v.value.copy()) for k, v in params.items()}
        self.kind = kind  # "probe" (trained) or "random"
        self.probe_heldout_accuracy = probe_heldout_accuracy

    def features(self, channels):
        """Four feature Tensors with strictly decreasing spatial width."""
        x = ad.as_tensor(channels)
        if x.value.ndim == 3:
            x = ad.reshape(x, (1,) + x.value.shape)
        return nets.probe_encoder(self.params, x)

    def feature_values(self, channels):
        return [f.value for f in self.features(channels)]


def feature_loss(pyramid, sim_channels, real_levels):
    """Weighted multi-level mean absolute feature distance.

    sim_channels: Tensor (or array) fed through the frozen extractor;
    real_levels: precomputed reference feature arrays (or channels to
    extract them from).
    """
    sim_levels = pyramid.features(sim_channels)
    if not isinstance(real_levels, (list, tuple)):
        real_levels = pyramid.feature_values(real_levels)
    total = None
    for wk, fs, fr in zip(PYRAMID_WEIGHTS, sim_levels, real_levels):
        term = ad.mul(ad.mean(ad.absolute(ad.sub(fs, Tensor(fr)))), wk)
        total = term if total is None else ad.add(total, term)
    return total


def apply_mask(scan, mask):
    """Refined scan: validity ANDed with the hard keep decisions."""
    hard = mask.hard if isinstance(mask, RaydropMask) else np.asarray(mask, dtype=bool)
    if hard.shape != scan.valid.shape:
        raise ValueError(f"mask shape {hard.shape} does not match scan {scan.valid.shape}")
    return scan.with_validity(hard)


def train_feature_extractor(images, labels_list, valid_list, rig, kind="probe",
                            iterations=200, lr=3e-4, batch=2, seed=0):
    """Build the frozen pyramid: a trained range-image probe, or the
    fixed random-weight variant.

    images are probe channel stacks (H,W,5); labels/valid give the
    supervision domain. Requires >= 20 images for the trained variant.
    """
    from . import evalmetrics
    if kind == "random":
        params = nets.init_probe_params(seed, in_channels=5, n_classes=N_CLASSES)
        return FeaturePyramid(params, "random")
    if kind != "probe":
        raise ValueError(f"unknown extractor kind {kind!r}")
    if len(images) < 20:
        raise ValueError(f"need >= 20 labeled images to train the extractor, "
                         f"got {len(images)}")
    # hold out the last two images to measure probe quality before freezing
    probe = evalmetrics.train_probe_on_channels(images[:-2], labels_list[:-2],
                                                valid_list[:-2],
                                                iterations=iterations, lr=lr,
                                                batch=batch, seed=seed)
    acc = evalmetrics.probe_pixel_accuracy(probe, images[-2:], labels_list[-2:],
                                           valid_list[-2:])
    return FeaturePyramid(probe.params, "probe", probe_heldout_accuracy=acc)
