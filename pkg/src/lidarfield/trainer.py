"""Two-phase optimization.

Phase 1 fits the field to camera color/weak labels and LiDAR depth
(total = depth + w_rgb*rgb + w_label*weak_label + lidar_label, composed
in exactly that order so logged components recompose the logged total).
Phase 2 freezes the field and fits the raydrop net to sim/real pairs
(total = mask + w_feat*feature).

Batches and jitter derive from per-iteration seed sequences, so a resumed
run replays the interrupted trajectory bit for bit.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import formats, optim, raydrop
from .autodiff import Tensor
from .field import init_field
from .optim import lr_schedule
from .renderer import render_rays

STREAM_BATCH, STREAM_CAM_JITTER, STREAM_LIDAR_JITTER, STREAM_GUMBEL = 11, 12, 13, 14


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass(frozen=True)
class LossWeights:
    rgb: float = 1.0
    label: float = 0.2
    feat: float = 0.2

    def __post_init__(self):
        if self.rgb < 0 or self.label < 0 or self.feat < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class TrainSchedule:
    recon_iters: int = 4000
    gen_iters: int = 2000
    warmup: int = 250
    lr_start: float = 5e-4
    lr_end: float = 5e-6
    rgb_batch: int = 2048
    lidar_batch: int = 2048
    image_batch: int = 4
    lr_gen: float = 1e-4
    n_samples: int = 128
    tau_gumbel: float = 1.0
    grad_clip: float = 10.0
    log_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.lr_start > self.lr_end > 0:
            raise ValueError("require lr_start > lr_end > 0")
        if self.recon_iters > 0 and self.warmup >= self.recon_iters:
            raise ValueError("warmup must be shorter than the phase-1 run")


def _stream(seed, iteration, tag):
    return np.random.SeedSequence((int(seed), int(iteration), int(tag)))


def recompose_recon(depth, rgb, weak_label, lidar_label, weights):
    """The logged phase-1 total: depth + w_rgb*rgb + w_label*weak + lidar."""
    return ((depth + rgb * weights.rgb) + weak_label * weights.label) + lidar_label


def recompose_gen(mask, feature, weights):
    """The logged phase-2 total: mask + w_feat*feature."""
    return mask + feature * weights.feat


# ---------------------------------------------------------------------------
# phase-1 loss

def recon_loss(fld, batch, weights, n_samples, seed=0, iteration=0, jitter=True):
    """Reconstruction loss and its components for one ray batch.

    batch: dict with cam_* (origins, dirs, tn, tf, colors, labels) and
    lidar_* (origins, dirs, tn, tf, depths, labels, has_label) arrays.
    """
    if batch["cam_origins"].shape[0] == 0 or batch["lidar_origins"].shape[0] == 0:
        raise ValueError("empty ray batch")

    cam = render_rays(fld, batch["cam_origins"], batch["cam_dirs"],
                      batch["cam_tn"], batch["cam_tf"], n_samples,
                      seed=_stream(seed, iteration, STREAM_CAM_JITTER), jitter=jitter)
    diff = ad.sub(cam.color, Tensor(batch["cam_colors"]))
    l_rgb = ad.mean(ad.sqrt(ad.add(ad.reduce_sum(ad.mul(diff, diff), axis=1), 1e-24)))
    l_weak = ad.mean(ad.softmax_cross_entropy(cam.logits, batch["cam_labels"]))

    lid = render_rays(fld, batch["lidar_origins"], batch["lidar_dirs"],
                      batch["lidar_tn"], batch["lidar_tf"], n_samples,
                      seed=_stream(seed, iteration, STREAM_LIDAR_JITTER), jitter=jitter,
                      need_color=False)
    l_depth = ad.mean(ad.absolute(ad.sub(lid.depth, Tensor(batch["lidar_depths"]))))
    has = np.asarray(batch["lidar_has_label"], dtype=bool)
    if has.any():
        ce = ad.softmax_cross_entropy(lid.logits, batch["lidar_labels"])
        l_lid = ad.mul(ad.reduce_sum(ad.mul(ce, Tensor(has.astype(float)))),
                       1.0 / has.sum())
    else:
        l_lid = Tensor(0.0)

    total = ad.add(ad.add(ad.add(l_depth, ad.mul(l_rgb, weights.rgb)),
                          ad.mul(l_weak, weights.label)), l_lid)
    comps = {"depth": float(l_depth.value), "rgb": float(l_rgb.value),
             "weak_label": float(l_weak.value), "lidar_label": float(l_lid.value),
             "total": float(total.value)}
    return total, comps


def _select_batch(data, rng, rgb_batch, lidar_batch):
    ci = rng.integers(0, data.n_cam, size=min(rgb_batch, data.n_cam))
    li = rng.integers(0, data.n_lidar, size=min(lidar_batch, data.n_lidar))
    return {"cam_origins": data.cam_origins[ci], "cam_dirs": data.cam_dirs[ci],
            "cam_tn": data.cam_tn[ci], "cam_tf": data.cam_tf[ci],
            "cam_colors": data.cam_colors[ci], "cam_labels": data.cam_labels[ci],
            "lidar_origins": data.lidar_origins[li], "lidar_dirs": data.lidar_dirs[li],
            "lidar_tn": data.lidar_tn[li], "lidar_tf": data.lidar_tf[li],
            "lidar_depths": data.lidar_depths[li], "lidar_labels": data.lidar_labels[li],
            "lidar_has_label": data.lidar_has_label[li]}


# ---------------------------------------------------------------------------
# checkpoints

def field_blocks(fld, adam=None, iteration=0):
    blocks = {f"field.{name}": t.value for name, t in fld.named_params()}
    blocks["meta.iteration"] = np.array([float(iteration)])
    if adam is not None:
        blocks.update(adam.state_blocks())
    return blocks


def load_field_checkpoint(path, config):
    """Restore (field, adam_or_None, iteration) from an NLCKPT1 file."""
    blocks = formats.read_checkpoint(path)
    fld = init_field(config, seed=0)
    known = {f"field.{n}" for n, _ in fld.named_params()}
    adam = optim.Adam(fld.named_params())
    known |= set(adam.state_blocks().keys()) | {"meta.iteration"}
    for name in blocks:
        if name not in known:
            raise formats.UnknownBlockError(f"unknown parameter block {name!r}")
    for name, t in fld.named_params():
        key = f"field.{name}"
        if blocks[key].shape != t.value.shape:
            raise formats.IntegrityError(f"block {key}: shape {blocks[key].shape} "
                                         f"!= expected {t.value.shape}")
        t.value[:] = blocks[key]
    has_adam = any(k.startswith("adam.") for k in blocks)
    if has_adam:
        adam.load_state_blocks(blocks)
    return fld, (adam if has_adam else None), int(blocks["meta.iteration"][0])


def net_blocks(net, adam=None, iteration=0):
    blocks = {f"raydrop.{name}": t.value for name, t in net.named_params()}
    blocks["meta.iteration"] = np.array([float(iteration)])
    if adam is not None:
        blocks.update(adam.state_blocks())
    return blocks


def load_net_checkpoint(path):
    blocks = formats.read_checkpoint(path)
    net = raydrop.RaydropNet.init(seed=0)
    known = {f"raydrop.{n}" for n, _ in net.named_params()}
    adam = optim.Adam(net.named_params())
    known |= set(adam.state_blocks().keys()) | {"meta.iteration"}
    for name in blocks:
        if name not in known:
            raise formats.UnknownBlockError(f"unknown parameter block {name!r}")
    for name, t in net.named_params():
        t.value[:] = blocks[f"raydrop.{name}"]
    has_adam = any(k.startswith("adam.") for k in blocks)
    if has_adam:
        adam.load_state_blocks(blocks)
    return net, (adam if has_adam else None), int(blocks["meta.iteration"][0])


class LossLog:
    """Append-only CSV loss log."""

    def __init__(self, path, fields):
        self.path = path
        self.fields = fields
        self.rows = []
        if path and not os.path.exists(path):
            with open(path, "w", newline="") as f:
                csv.writer(f).writerow(fields)

    def append(self, row):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow([repr(row[k]) if isinstance(row[k], float)
                                        else row[k] for k in self.fields])


# ---------------------------------------------------------------------------
# phase 1

def train_reconstruction(data, field_config, schedule, weights, out_dir=None,
                         resume_from=None, stop_at=None):
    """Fit the field to the reconstruction loss; returns (field, history).

    Writes field.nlckpt and recon_loss.csv under out_dir when given.
    Training state is checkpointed so a resumed run replays the exact
    uninterrupted trajectory.
    """
    if resume_from:
        fld, adam, start = load_field_checkpoint(resume_from, field_config)
        if adam is None:
            adam = optim.Adam(fld.named_params())
    else:
        fld = init_field(field_config, seed=schedule.seed)
        adam = optim.Adam(fld.named_params())
        start = 0
    fld.set_trainable(True)

    log = LossLog(os.path.join(out_dir, "recon_loss.csv") if out_dir else None,
                  ["iter", "lr", "depth", "rgb", "weak_label", "lidar_label", "total"])
    end = schedule.recon_iters if stop_at is None else min(stop_at, schedule.recon_iters)
    last_good = None
    for i in range(start, end):
        rng = np.random.default_rng(_stream(schedule.seed, i, STREAM_BATCH))
        batch = _select_batch(data, rng, schedule.rgb_batch, schedule.lidar_batch)
        total, comps = recon_loss(fld, batch, weights, schedule.n_samples,
                                  seed=schedule.seed, iteration=i)
        if not np.isfinite(total.value):
            path = None
            if out_dir and last_good is not None:
                path = os.path.join(out_dir, "field_last_good.nlckpt")
                formats.write_checkpoint(path, last_good)
            raise TrainingDiverged(f"reconstruction loss non-finite at iteration {i}",
                                   path)
        total.backward()
        optim.clip_gradients(fld.named_params(), schedule.grad_clip)
        lr = lr_schedule(i + 1, schedule.recon_iters, schedule.warmup,
                         schedule.lr_start, schedule.lr_end)
        adam.step(lr)
        if (i + 1) % schedule.log_every == 0 or i + 1 == end:
            log.append({"iter": i + 1, "lr": lr, **comps})
            last_good = field_blocks(fld, adam, i + 1)
    if out_dir:
        formats.write_checkpoint(os.path.join(out_dir, "field.nlckpt"),
                                 field_blocks(fld, adam, end))
    return fld, log.rows


# ---------------------------------------------------------------------------
# phase 2

def gen_loss(net, pyramid, pairs, weights, tau_gumbel, seed, fld, rig,
             caches=None, iteration=0):
    """Generation loss over a pair batch; field must be frozen.

    Returns (total Tensor, components). caches, when provided, holds the
    precomputed constant inputs from _pair_caches.
    """
    if fld is not None and not fld.frozen:
        raise ValueError("generation loss requires a frozen field (phase mixing)")
    c = caches if caches is not None else _pair_caches(pairs, pyramid, rig,
                                                       need_features=weights.feat > 0)
    x = Tensor(np.stack([ci["unet"] for ci in c]))
    logits = raydrop.raydrop_forward(net, x)
    m_gt = np.stack([ci["m_gt"] for ci in c])
    domain = np.stack([ci["domain"] for ci in c])
    l_mask = raydrop.mask_loss(logits, m_gt, domain)
    if weights.feat > 0:
        mask = raydrop.gumbel_sample(logits, tau_gumbel,
                                     seed=_stream(seed, iteration, STREAM_GUMBEL)
                                     .generate_state(1)[0])
        b, h, w = logits.value.shape
        keep4 = ad.reshape(mask.keep, (b, h, w, 1))
        sim_in = ad.mul(Tensor(np.stack([ci["probe_sim"] for ci in c])), keep4)
        real_levels = [np.concatenate([ci["real_levels"][k] for ci in c], axis=0)
                       for k in range(raydrop.PYRAMID_LEVELS)]
        l_feat = raydrop.feature_loss(pyramid, sim_in, real_levels)
        total = ad.add(l_mask, ad.mul(l_feat, weights.feat))
    else:
        l_feat = Tensor(0.0)
        total = l_mask
    comps = {"mask": float(l_mask.value), "feature": float(l_feat.value),
             "total": float(total.value)}
    return total, comps


def _pair_caches(pairs, pyramid, rig, need_features=True):
    caches = []
    for pair in pairs:
        entry = {"unet": raydrop.unet_channels(pair.sim), "m_gt": pair.gt_mask,
                 "domain": pair.sim.valid}
        if need_features:
            entry["probe_sim"] = raydrop.probe_channels(pair.sim, rig)
            entry["real_levels"] = pyramid.feature_values(
                raydrop.probe_channels(pair.real, rig))
        caches.append(entry)
    return caches


def train_generation(fld, pairs, schedule, weights, pyramid, rig, out_dir=None,
                     resume_from=None, stop_at=None):
    """Fit the raydrop net on frozen-field pairs; returns (net, history)."""
    if not fld.frozen:
        raise ValueError("freeze the field before generation training")
    if resume_from:
        net, adam, start = load_net_checkpoint(resume_from)
        if adam is None:
            adam = optim.Adam(net.named_params())
    else:
        net = raydrop.RaydropNet.init(seed=schedule.seed)
        adam = optim.Adam(net.named_params())
        start = 0
    caches = _pair_caches(pairs, pyramid, rig, need_features=weights.feat > 0)

    log = LossLog(os.path.join(out_dir, "gen_loss.csv") if out_dir else None,
                  ["iter", "lr", "mask", "feature", "total"])
    end = schedule.gen_iters if stop_at is None else min(stop_at, schedule.gen_iters)
    last_good = None
    for i in range(start, end):
        rng = np.random.default_rng(_stream(schedule.seed, i, STREAM_BATCH))
        pick = rng.integers(0, len(pairs), size=min(schedule.image_batch, len(pairs)))
        total, comps = gen_loss(net, pyramid, None, weights, schedule.tau_gumbel,
                                schedule.seed, fld, rig,
                                caches=[caches[j] for j in pick], iteration=i)
        if not np.isfinite(total.value):
            path = None
            if out_dir and last_good is not None:
                path = os.path.join(out_dir, "raydrop_last_good.nlckpt")
                formats.write_checkpoint(path, last_good)
            raise TrainingDiverged(f"generation loss non-finite at iteration {i}", path)
        total.backward()
        optim.clip_gradients(net.named_params(), schedule.grad_clip)
        adam.step(schedule.lr_gen)
        if (i + 1) % schedule.log_every == 0 or i + 1 == end:
            log.append({"iter": i + 1, "lr": schedule.lr_gen, **comps})
            last_good = net_blocks(net, adam, i + 1)
    if out_dir:
        formats.write_checkpoint(os.path.join(out_dir, "raydrop.nlckpt"),
                                 net_blocks(net, adam, end))
    return net, log.rows
