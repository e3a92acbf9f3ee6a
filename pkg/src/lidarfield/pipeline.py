"""End-to-end workflows: dataset synthesis, the two training phases,
simulation with learned raydrop, point-cloud/segmentation evaluation,
and the raydrop/feature-loss ablation grid."""

import csv
import os

import numpy as np

from . import datagen, evalmetrics, formats, raydrop, trainer
from .equirect import build_pair, project
from .lidar import EgoState, simulate_scan
from .oracle import apply_synthetic_raydrop

VARIANT_RAYDROP = ("none", "random", "learned")
VARIANT_FEAT = ("none", "random", "probe")


def _clearance(scene, p, margin=0.45):
    """Distance check: sensor positions must stay off every primitive."""
    for prim in scene.primitives:
        if prim.kind == "box":
            d = np.abs(p - prim.center) - (prim.size / 2 + margin)
            if (d < 0).all():
                return False
        elif prim.kind == "sphere":
            if np.linalg.norm(p - prim.center) < prim.radius + margin:
                return False
    return p[2] > margin  # above the ground plane


def _spread_states(cfg, n, stream, margin):
    """Sensor poses scattered over the scene footprint with height variety;
    diverse viewpoints are what pins down grazing-incidence geometry."""
    s = cfg["scene"]
    scene = cfg.scene()
    lo, hi = np.array(s["bounds"]).reshape(2, 3)
    half = (hi[:2] - lo[:2]) / 2 * s["ego_xy_frac"]
    center = (hi[:2] + lo[:2]) / 2
    z0, z1 = s["ego_z_range"]
    rng = np.random.default_rng(np.random.SeedSequence((s["seed"], stream)))
    states = []
    for _ in range(400 * n):
        p = rng.uniform((center[0] - half[0], center[1] - half[1], z0),
                        (center[0] + half[0], center[1] + half[1], z1))
        if _clearance(scene, p, margin):
            states.append(EgoState(p, s["ego_velocity"]))
            if len(states) == n:
                return states
    raise ValueError("could not place sensor poses clear of the primitives")


def train_ego_states(cfg):
    s = cfg["scene"]
    if s["ego_mode"] == "spread":
        return _spread_states(cfg, s["n_lidar_frames"], 0xE60, margin=0.5)
    return datagen.line_ego_states(s["n_lidar_frames"], start=s["ego_start"],
                                   step=s["ego_step"], velocity=s["ego_velocity"])


def test_ego_states(cfg):
    """Held-out sensor poses: lateral offsets of the training poses.

    Mirrors the annotated-keyframe protocol where evaluation frames sit
    between training frames of the same drive; the origins (and therefore
    every beam) still differ from anything trained on.
    """
    s = cfg["scene"]
    if s["ego_mode"] != "spread":
        return datagen.line_ego_states(s["n_test_frames"], start=s["test_ego_start"],
                                       step=s["test_ego_step"],
                                       velocity=s["ego_velocity"])
    scene = cfg.scene()
    train = _spread_states(cfg, s["n_lidar_frames"], 0xE60, margin=0.5)
    states = []
    rng = np.random.default_rng(np.random.SeedSequence((s["seed"], 0xE61)))
    i = 0
    while len(states) < s["n_test_frames"]:
        base = train[i % len(train)].origin
        for _ in range(50):
            ang = rng.uniform(0, 2 * np.pi)
            p = base + np.array([0.45 * np.cos(ang), 0.45 * np.sin(ang),
                                 rng.uniform(-0.1, 0.15)])
            if _clearance(scene, p) and p[2] > 1.0:
                states.append(EgoState(p, s["ego_velocity"]))
                break
        i += 1
    return states


def oracle_scans(cfg, scene, states, frame_offset=0):
    return datagen.oracle_scan_set(scene, cfg.rig(), states, frame_offset=frame_offset)


def real_scans(cfg, scans):
    """Oracle scans with the synthetic raydrop rule applied (the targets)."""
    rule = cfg.raydrop_rule()
    rig = cfg.rig()
    return [apply_synthetic_raydrop(s, rule, rig) for s in scans]


def camera_views(cfg, scene):
    s = cfg["scene"]
    poses = datagen.ring_camera_poses(s["n_camera_views"], radius=s["camera_radius"],
                                      height=s["camera_height"])
    intr = datagen.pinhole_intrinsics(s["image_width"], s["image_height"],
                                      s["camera_hfov_deg"])
    return datagen.render_views(scene, poses, s["image_width"], s["image_height"],
                                weak_label_rate=s["weak_label_rate"], seed=s["seed"],
                                intrinsics=intr)


def scan_paths(out_dir, kind, n):
    return [os.path.join(out_dir, "scans", f"{kind}_{i:03d}.nlscan") for i in range(n)]


def generate_scene_data(cfg, out_dir):
    """scene-gen: write oracle + rule-dropped scans for train and test poses."""
    scene = cfg.scene()
    os.makedirs(os.path.join(out_dir, "scans"), exist_ok=True)
    written = []
    for kind, states, offset in (("train", train_ego_states(cfg), 0),
                                 ("test", test_ego_states(cfg), 1000)):
        oracle = oracle_scans(cfg, scene, states, frame_offset=offset)
        real = real_scans(cfg, oracle)
        for name, scans in ((f"oracle_{kind}", oracle), (f"real_{kind}", real)):
            for path, scan in zip(scan_paths(out_dir, name, len(scans)), scans):
                formats.write_scan(path, scan)
                written.append(path)
    return written


def run_reconstruction(cfg, out_dir):
    """train-recon: fit the field, write field.nlckpt + recon_loss.csv."""
    scene = cfg.scene()
    views = camera_views(cfg, scene)
    scans = oracle_scans(cfg, scene, train_ego_states(cfg))
    data = datagen.build_recon_data(scene, views, cfg.rig(), scans, cfg.field_bounds(),
                                    cfg["scene"]["lidar_label_fraction"])
    fld, history = trainer.train_reconstruction(data, cfg.field_config(),
                                                cfg.schedule(), cfg.weights(),
                                                out_dir=out_dir)
    return fld, history


def coarse_sims(cfg, fld, states, frame_offset=0, seed=None):
    """Coarse simulated scans (before raydrop) at the given poses."""
    e = cfg["eval"]
    seed = cfg["schedule"]["seed"] if seed is None else seed
    return [simulate_scan(fld, cfg.rig(), ego, seed=(seed + 7 * i + frame_offset),
                          tau_acc=e["tau_acc"], n_samples=e["n_samples_sim"],
                          frame_id=frame_offset + i)
            for i, ego in enumerate(states)]


def build_extractor(cfg, scene, kind=None):
    """The frozen feature pyramid: trained probe or fixed random weights."""
    kind = kind if kind is not None else cfg["raydrop"]["extractor"]
    rig = cfg.rig()
    if kind == "random":
        return raydrop.train_feature_extractor([], [], [], rig, kind="random",
                                               seed=cfg["schedule"]["seed"])
    states = train_ego_states(cfg) + test_ego_states(cfg)
    extra = datagen.line_ego_states(max(0, 20 - len(states)),
                                    start=(-2.0, -1.5, 1.7), step=(0.45, 0.35, 0.0))
    scans = oracle_scans(cfg, scene, states + extra)
    images, labels, valid = [], [], []
    for s in scans:
        images.append(evalmetrics.scan_channels(s, rig))
        labels.append(s.labels)
        valid.append(s.valid)
    return raydrop.train_feature_extractor(
        images, labels, valid, rig, kind="probe",
        iterations=cfg["raydrop"]["extractor_iters"], lr=cfg["raydrop"]["extractor_lr"],
        batch=cfg["eval"]["probe_batch"], seed=cfg["schedule"]["seed"])


def build_pairs(cfg, fld, states=None):
    scene = cfg.scene()
    rig = cfg.rig()
    states = states or train_ego_states(cfg)
    sims = coarse_sims(cfg, fld, states)
    reals = real_scans(cfg, oracle_scans(cfg, scene, states))
    return [build_pair(s, r, rig) for s, r in zip(sims, reals)]


def run_raydrop_training(cfg, out_dir, field_ckpt=None, extractor=None, weights=None):
    """train-raydrop: freeze the field, train the generation module."""
    fld, _, _ = trainer.load_field_checkpoint(
        field_ckpt or os.path.join(out_dir, "field.nlckpt"), cfg.field_config())
    fld.freeze()
    scene = cfg.scene()
    pairs = build_pairs(cfg, fld)
    weights = weights or cfg.weights()
    pyramid = extractor or (build_extractor(cfg, scene)
                            if weights.feat > 0 else
                            build_extractor(cfg, scene, kind="random"))
    net, history = trainer.train_generation(fld, pairs, cfg.schedule(), weights,
                                            pyramid, cfg.rig(), out_dir=out_dir)
    return net, history


def masked_sims(cfg, fld, net, states, frame_offset=0):
    """Simulate scans and refine them with the learned mask (threshold 0.5)."""
    rig = cfg.rig()
    sims = coarse_sims(cfg, fld, states, frame_offset=frame_offset)
    if net is None:
        return sims
    out = []
    for s in sims:
        img = project(s, rig)
        logits = raydrop.raydrop_forward(net, raydrop.unet_channels(img))
        mask = raydrop.inference_mask(logits.value[0], cfg["raydrop"]["threshold"])
        out.append(raydrop.apply_mask(s, mask))
    return out


def run_simulate(cfg, out_dir, use_raydrop=True):
    """simulate: write refined scans at the held-out test poses."""
    fld, _, _ = trainer.load_field_checkpoint(os.path.join(out_dir, "field.nlckpt"),
                                              cfg.field_config())
    fld.freeze()
    net = None
    if use_raydrop:
        net, _, _ = trainer.load_net_checkpoint(os.path.join(out_dir, "raydrop.nlckpt"))
    scans = masked_sims(cfg, fld, net, test_ego_states(cfg), frame_offset=1000)
    paths = scan_paths(out_dir, "sim_test", len(scans))
    os.makedirs(os.path.join(out_dir, "scans"), exist_ok=True)
    for path, scan in zip(paths, scans):
        formats.write_scan(path, scan)
    return paths


def run_eval_pointcloud(cfg, out_dir):
    """eval-pointcloud: depth MAE, recall, label quality on test scans."""
    scene = cfg.scene()
    states = test_ego_states(cfg)
    oracle = oracle_scans(cfg, scene, states, frame_offset=1000)
    real = real_scans(cfg, oracle)
    sim_paths = scan_paths(out_dir, "sim_test", len(states))
    sims = [formats.read_scan(p) for p in sim_paths]
    mae = np.mean([evalmetrics.depth_mae(s, r) for s, r in zip(sims, real)])
    recall = np.mean([evalmetrics.recall_at(s, r, cfg["eval"]["recall_tau"])
                      for s, r in zip(sims, real)])
    quality = evalmetrics.label_quality(sims, oracle)
    report = {"depth_mae": float(mae), "recall": float(recall),
              "label_quality_miou": float(quality)}
    _write_report(os.path.join(out_dir, "pointcloud_report"), [report])
    return report


def run_eval_seg(cfg, out_dir):
    """eval-seg: the sim-vs-real segmentation protocol on this run's scans."""
    scene = cfg.scene()
    train_states = train_ego_states(cfg)
    fld, _, _ = trainer.load_field_checkpoint(os.path.join(out_dir, "field.nlckpt"),
                                              cfg.field_config())
    fld.freeze()
    net = None
    rd_path = os.path.join(out_dir, "raydrop.nlckpt")
    if os.path.exists(rd_path):
        net, _, _ = trainer.load_net_checkpoint(rd_path)
    sim_train = masked_sims(cfg, fld, net, train_states)
    real_train = real_scans(cfg, oracle_scans(cfg, scene, train_states))
    real_test = real_scans(cfg, oracle_scans(cfg, scene, test_ego_states(cfg),
                                             frame_offset=1000))
    report = evalmetrics.sim2real_protocol(sim_train, real_train, real_test,
                                           cfg.rig(), cfg.probe_config())
    _write_report(os.path.join(out_dir, "seg_report"), [report])
    return report


def rate_matched_random_mask(shape, keep_rate, seed):
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xAB1A)))
    return rng.uniform(size=shape) < keep_rate


def run_ablation(cfg, out_dir, variants=None):
    """ablate: sim2real ratio per (raydrop, feature-loss) variant.

    Shares the phase-1 field, oracle data and probe seeds across variants
    so rows differ only in the generation stage.
    """
    variants = variants or [("none", "none"), ("random", "none"), ("learned", "none"),
                            ("learned", "random"), ("learned", "probe")]
    scene = cfg.scene()
    rig = cfg.rig()
    fld, _, _ = trainer.load_field_checkpoint(os.path.join(out_dir, "field.nlckpt"),
                                              cfg.field_config())
    fld.freeze()
    train_states = train_ego_states(cfg)
    sims_train = coarse_sims(cfg, fld, train_states)
    real_train = real_scans(cfg, oracle_scans(cfg, scene, train_states))
    real_test = real_scans(cfg, oracle_scans(cfg, scene, test_ego_states(cfg),
                                             frame_offset=1000))
    pairs = [build_pair(s, r, rig) for s, r in zip(sims_train, real_train)]

    for rd_mode, feat_mode in variants:
        if rd_mode not in VARIANT_RAYDROP or feat_mode not in VARIANT_FEAT:
            raise ValueError(f"unknown ablation variant ({rd_mode}, {feat_mode})")
    results = {}
    learned_keep_rate = None
    # learned variants first: rate-matched random needs the learned keep rate
    ordered = sorted(variants, key=lambda v: v[0] != "learned")
    for rd_mode, feat_mode in ordered:
        if rd_mode == "learned":
            weights = cfg.weights()
            if feat_mode == "none":
                weights = trainer.LossWeights(weights.rgb, weights.label, 0.0)
            pyramid = build_extractor(cfg, scene, kind=feat_mode) \
                if feat_mode != "none" else build_extractor(cfg, scene, kind="random")
            net, _ = trainer.train_generation(fld, pairs, cfg.schedule(), weights,
                                              pyramid, rig)
            sim_train = masked_sims(cfg, fld, net, train_states)
            kept = sum(s.n_valid() for s in sim_train)
            total = sum(s.n_valid() for s in sims_train)
            if learned_keep_rate is None:
                learned_keep_rate = kept / max(total, 1)
        elif rd_mode == "random":
            rate = learned_keep_rate if learned_keep_rate is not None else 0.9
            sim_train = [raydrop.apply_mask(
                s, rate_matched_random_mask(s.valid.shape, rate,
                                            cfg["schedule"]["seed"] + i))
                for i, s in enumerate(sims_train)]
        else:
            sim_train = sims_train
        rep = evalmetrics.sim2real_protocol(sim_train, real_train, real_test, rig,
                                            cfg.probe_config())
        results[(rd_mode, feat_mode)] = {"raydrop": rd_mode,
                                         "feature_loss": feat_mode, **rep}
    rows = [results[v] for v in variants]
    _write_report(os.path.join(out_dir, "ablation"), rows)
    return rows


def _write_report(stem, rows):
    with open(stem + ".csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(stem + ".txt", "w") as f:
        for row in rows:
            f.write("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in row.items()) + "\n")
