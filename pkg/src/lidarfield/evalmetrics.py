"""Metrics, the range-image segmentation probe, and the sim-vs-real protocol.

mIoU follows range-image practice: the ignore label never enters the
confusion matrix, and classes absent from both prediction and ground
truth are left out of the mean.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets, optim
from .autodiff import Tensor
from .equirect import beam_grid_image
from .field import N_CLASSES
from .lidar import IGNORE_LABEL
from .raydrop import probe_channels


def confusion_matrix(pred, gt, k=N_CLASSES):
    """KxK counts (rows = ground truth, cols = prediction); ignore excluded."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred and gt lengths differ: {pred.shape} vs {gt.shape}")
    keep = (gt >= 0) & (gt < k)
    counts = np.bincount(k * gt[keep] + pred[keep], minlength=k * k)
    return counts.reshape(k, k)


def miou(pred, gt, k=N_CLASSES):
    """Per-class IoU (NaN for classes absent from both sides) and the mean."""
    cm = confusion_matrix(pred, gt, k)
    if cm.sum() == 0:
        raise ValueError("mIoU of an empty label set")
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + fp + fn
    iou = np.full(k, np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    return iou, float(np.nanmean(iou))


def pixel_accuracy(pred, gt, k=N_CLASSES):
    cm = confusion_matrix(pred, gt, k)
    return float(np.diag(cm).sum() / max(cm.sum(), 1))


def depth_mae(sim_scan, real_scan):
    """Mean absolute depth error over cells valid in both scans."""
    both = sim_scan.valid & real_scan.valid
    if not both.any():
        raise ValueError("no overlapping valid cells between sim and real scans")
    return float(np.abs(sim_scan.ranges[both] - real_scan.ranges[both]).mean())


def recall_at(sim_scan, real_scan, tau=0.5):
    """Fraction of real-valid cells whose sim depth exists and errs < tau."""
    real_cells = real_scan.valid
    if not real_cells.any():
        return 0.0
    both = real_cells & sim_scan.valid
    close = np.zeros_like(real_cells, dtype=bool)
    close[both] = np.abs(sim_scan.ranges[both] - real_scan.ranges[both]) < tau
    return float(close.sum() / real_cells.sum())


def label_quality(sim_scans, oracle_scans, k=N_CLASSES):
    """mIoU of simulated labels against oracle labels at co-valid cells."""
    cm = np.zeros((k, k), dtype=np.int64)
    for sim, orc in zip(sim_scans, oracle_scans):
        both = sim.valid & orc.valid
        cm += confusion_matrix(sim.labels[both], orc.labels[both], k)
    if cm.sum() == 0:
        raise ValueError("no co-valid cells to score label quality on")
    tp = np.diag(cm).astype(np.float64)
    denom = tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    present = denom > 0
    iou = np.full(k, np.nan)
    iou[present] = tp[present] / denom[present]
    return float(np.nanmean(iou))


def returned_label_accuracy(sim_scans, oracle_scans, k=N_CLASSES):
    """Label accuracy over rays returned in both sim and oracle."""
    cm = np.zeros((k, k), dtype=np.int64)
    for sim, orc in zip(sim_scans, oracle_scans):
        both = sim.valid & orc.valid
        cm += confusion_matrix(sim.labels[both], orc.labels[both], k)
    return float(np.diag(cm).sum() / max(cm.sum(), 1))


# ---------------------------------------------------------------------------
# segmentation probe

@dataclass
class ProbeConfig:
    iterations: int = 200
    lr: float = 3e-4
    batch: int = 2
    seed: int = 0


class SegProbe:
    """Small encoder-decoder over equirect channel stacks, K classes/cell."""

    def __init__(self, params, config):
        self.params = params
        self.config = config

    def named_params(self):
        return list(self.params.items())

    def predict(self, channels):
        """Per-cell class labels for one (H,W,5) channel stack."""
        x = Tensor(np.asarray(channels)[None])
        logits = nets.probe_logits(self.params, x)
        return logits.value[0].argmax(axis=-1)


def scan_channels(scan, rig):
    """Probe input channels for a beam-aligned scan."""
    return probe_channels(beam_grid_image(scan, rig), rig)


def train_probe_on_channels(images, labels_list, valid_list, iterations=200,
                            lr=3e-4, batch=2, seed=0):
    """Cross-entropy training of the probe on labeled channel stacks."""
    if len(images) < 1:
        raise ValueError("probe training needs at least one labeled image")
    cfg = ProbeConfig(iterations, lr, batch, seed)
    params = nets.init_probe_params(seed, in_channels=images[0].shape[-1],
                                    n_classes=N_CLASSES)
    probe = SegProbe(params, cfg)
    if iterations == 0:
        return probe
    adam = optim.Adam(probe.named_params())
    images = [np.asarray(im) for im in images]
    targets = [np.where(l == IGNORE_LABEL, 0, l) for l in labels_list]
    domains = [v & (l != IGNORE_LABEL) for v, l in zip(valid_list, labels_list)]

    for i in range(iterations):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), i, 0x9B0)))
        pick = rng.integers(0, len(images), size=min(batch, len(images)))
        x = Tensor(np.stack([images[j] for j in pick]))
        tgt = np.stack([targets[j] for j in pick])
        dom = np.stack([domains[j] for j in pick]).astype(np.float64)
        n = dom.sum()
        if n == 0:
            continue
        logits = nets.probe_logits(params, x)
        ce = ad.softmax_cross_entropy(logits, tgt)
        loss = ad.mul(ad.reduce_sum(ad.mul(ce, Tensor(dom))), 1.0 / n)
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"probe training diverged at iteration {i}")
        loss.backward()
        adam.step(lr)
    return probe


def train_probe(scans, rig, config=None):
    """Probe trained on labeled beam-aligned scans."""
    cfg = config or ProbeConfig()
    images = [scan_channels(s, rig) for s in scans]
    labels = [s.labels for s in scans]
    valid = [s.valid for s in scans]
    return train_probe_on_channels(images, labels, valid, cfg.iterations, cfg.lr,
                                   cfg.batch, cfg.seed)


def probe_miou_on_scans(probe, scans, rig):
    """mIoU of probe predictions against scan labels on valid cells."""
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for s in scans:
        pred = probe.predict(scan_channels(s, rig))
        dom = s.valid & (s.labels != IGNORE_LABEL)
        cm += confusion_matrix(pred[dom], s.labels[dom])
    tp = np.diag(cm).astype(np.float64)
    denom = tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    present = denom > 0
    iou = np.full(N_CLASSES, np.nan)
    iou[present] = tp[present] / denom[present]
    return float(np.nanmean(iou))


def probe_pixel_accuracy(probe, images, labels_list, valid_list):
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for im, l, v in zip(images, labels_list, valid_list):
        pred = probe.predict(im)
        dom = v & (l != IGNORE_LABEL)
        cm += confusion_matrix(pred[dom], l[dom])
    return float(np.diag(cm).sum() / max(cm.sum(), 1))


def sim2real_protocol(sim_train_scans, real_train_scans, real_test_scans, rig,
                      config=None):
    """Train probe A on simulated scans and probe B on real scans, score
    both on held-out real scans, and report the mIoU ratio.

    Train and test poses must not overlap.
    """
    for tr in list(sim_train_scans) + list(real_train_scans):
        for te in real_test_scans:
            if np.abs(tr.pose - te.pose).max() < 1e-9:
                raise ValueError("train and test scan poses overlap")
    cfg = config or ProbeConfig()
    probe_a = train_probe(sim_train_scans, rig, cfg)
    probe_b = train_probe(real_train_scans, rig, cfg)
    miou_a = probe_miou_on_scans(probe_a, real_test_scans, rig)
    miou_b = probe_miou_on_scans(probe_b, real_test_scans, rig)
    return {"miou_sim_trained": miou_a, "miou_real_trained": miou_b,
            "ratio": miou_a / miou_b if miou_b > 0 else 0.0}
