"""Convolutional architectures over NHWC range images.

Two nets share these helpers: the raydrop U-Net (encoder 16-32-64 with
mirrored skip-connected decoder, one logit per cell) and the small
segmentation probe (four encoder stages 8-16-32-64 whose feature maps
double as the alignment pyramid). All convolutions are 3x3, zero-padded
over rows and circularly padded over azimuth columns.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _conv_init(rng, params, name, cin, cout, k=3):
    fan = cin * k * k
    params[f"{name}.w"] = Tensor(rng.normal(size=(k, k, cin, cout)) / np.sqrt(fan),
                                 requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def _conv(params, name, x):
    return ad.conv2d(x, params[f"{name}.w"], params[f"{name}.b"])


def _conv_relu(params, name, x):
    return ad.relu(_conv(params, name, x))


# ---------------------------------------------------------------------------
# raydrop U-Net

UNET_WIDTHS = (16, 32, 64)


def init_unet_params(seed, in_channels):
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x0E7)))
    p = {}
    w1, w2, w3 = UNET_WIDTHS
    _conv_init(rng, p, "enc1a", in_channels, w1)
    _conv_init(rng, p, "enc1b", w1, w1)
    _conv_init(rng, p, "enc2a", w1, w2)
    _conv_init(rng, p, "enc2b", w2, w2)
    _conv_init(rng, p, "enc3a", w2, w3)
    _conv_init(rng, p, "enc3b", w3, w3)
    _conv_init(rng, p, "dec3a", w3 + w3, w3)
    _conv_init(rng, p, "dec3b", w3, w3)
    _conv_init(rng, p, "dec2a", w3 + w2, w2)
    _conv_init(rng, p, "dec2b", w2, w2)
    _conv_init(rng, p, "dec1a", w2 + w1, w1)
    _conv_init(rng, p, "dec1b", w1, w1)
    _conv_init(rng, p, "out", w1, 1, k=1)
    return p


def unet_logits(params, x):
    """U-Net forward: x (B,H,W,C) -> per-cell logits (B,H,W)."""
    e1 = _conv_relu(params, "enc1b", _conv_relu(params, "enc1a", x))
    e2 = _conv_relu(params, "enc2b", _conv_relu(params, "enc2a", ad.maxpool2d(e1)))
    e3 = _conv_relu(params, "enc3b", _conv_relu(params, "enc3a", ad.maxpool2d(e2)))
    bottom = ad.maxpool2d(e3)
    d3 = ad.concat([ad.upsample2x(bottom), e3], axis=-1)
    d3 = _conv_relu(params, "dec3b", _conv_relu(params, "dec3a", d3))
    d2 = ad.concat([ad.upsample2x(d3), e2], axis=-1)
    d2 = _conv_relu(params, "dec2b", _conv_relu(params, "dec2a", d2))
    d1 = ad.concat([ad.upsample2x(d2), e1], axis=-1)
    d1 = _conv_relu(params, "dec1b", _conv_relu(params, "dec1a", d1))
    out = _conv(params, "out", d1)
    b, h, w, _ = out.value.shape
    return ad.reshape(out, (b, h, w))


# ---------------------------------------------------------------------------
# segmentation probe / feature pyramid

PROBE_WIDTHS = (8, 16, 32, 64)


def init_probe_params(seed, in_channels, n_classes):
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5E6)))
    p = {}
    w1, w2, w3, w4 = PROBE_WIDTHS
    _conv_init(rng, p, "s1", in_channels, w1)
    _conv_init(rng, p, "s2", w1, w2)
    _conv_init(rng, p, "s3", w2, w3)
    _conv_init(rng, p, "s4", w3, w4)
    _conv_init(rng, p, "d3", w4, w3)
    _conv_init(rng, p, "d2", w3, w2)
    _conv_init(rng, p, "d1", w2, w1)
    _conv_init(rng, p, "out", w1, n_classes, k=1)
    return p


def probe_encoder(params, x):
    """Four stage outputs with strictly decreasing spatial width."""
    s1 = _conv_relu(params, "s1", x)
    s2 = _conv_relu(params, "s2", ad.maxpool2d(s1))
    s3 = _conv_relu(params, "s3", ad.maxpool2d(s2))
    s4 = _conv_relu(params, "s4", ad.maxpool2d(s3))
    return [s1, s2, s3, s4]


def probe_logits(params, x):
    """Per-cell class logits (B,H,W,K)."""
    _, _, _, s4 = probe_encoder(params, x)
    d3 = _conv_relu(params, "d3", ad.upsample2x(s4))
    d2 = _conv_relu(params, "d2", ad.upsample2x(d3))
    d1 = _conv_relu(params, "d1", ad.upsample2x(d2))
    return _conv(params, "out", d1)
