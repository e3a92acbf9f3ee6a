"""Run configuration: flat-sectioned `key = value` text.

Unknown sections or keys are rejected with their path; missing keys take
the documented defaults below. The fully-resolved config renders back to
canonical text that reparses to an identical configuration.
"""

import os
from dataclasses import dataclass

import numpy as np

from .evalmetrics import ProbeConfig
from .field import FieldConfig
from .lidar import LidarRig
from .oracle import CLASS_NAMES, Primitive, RaydropRule, SceneConfig, build_scene
from .trainer import LossWeights, TrainSchedule


class ConfigError(ValueError):
    """Invalid configuration; the message carries the [section] key path."""


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def _parse_bool(s):
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _vec(n):
    def parse(s):
        parts = [float(x) for x in s.split()]
        if len(parts) != n:
            raise ValueError(f"expected {n} numbers, got {len(parts)}")
        return tuple(parts)
    return parse


# section -> key -> (parser, default). A None parser marks the repeatable
# primitive lines, handled specially.
SCHEMA = {
    "scene": {
        "seed": (int, 0),
        "bounds": (_vec(6), (-10.0, -10.0, 0.0, 10.0, 10.0, 6.0)),
        "allow_absent_classes": (_parse_bool, True),
        "primitive": (None, ()),
        "n_camera_views": (int, 20),
        "image_width": (int, 120),
        "image_height": (int, 80),
        "camera_radius": (float, 7.5),
        "camera_height": (float, 3.0),
        "camera_hfov_deg": (float, 70.0),
        "weak_label_rate": (float, 0.0),
        "n_lidar_frames": (int, 10),
        "n_test_frames": (int, 4),
        "lidar_label_fraction": (float, 1.0),
        "ego_mode": (str, "spread"),
        "ego_start": (_vec(3), (-2.5, -3.2, 1.8)),
        "ego_step": (_vec(3), (0.55, 0.7, 0.0)),
        "ego_velocity": (_vec(3), (10.0, 0.0, 0.0)),
        "ego_xy_frac": (float, 0.65),
        "ego_z_range": (_vec(2), (1.5, 2.8)),
        "test_ego_start": (_vec(3), (-1.9, -2.6, 1.75)),
        "test_ego_step": (_vec(3), (1.1, 1.3, 0.0)),
        "rule_incidence_deg": (float, 80.0),
        "rule_class_drop": (_vec(5), (0.0, 0.8, 0.0, 0.0, 0.0)),
        "rule_range_r0": (float, 25.0),
        "rule_range_pmax": (float, 0.0),
        "rule_seed": (int, 0),
    },
    "rig": {
        "channels": (int, 32),
        "fov_down_deg": (float, -30.67),
        "fov_up_deg": (float, 10.67),
        "width": (int, 1024),
        "spin_rate_hz": (float, 20.0),
        "mount": (_vec(3), (0.0, 0.0, 0.0)),
    },
    "field": {
        "levels": (int, 4),
        "base_resolution": (int, 16),
        "max_resolution": (int, 8192),
        "features_per_level": (int, 2),
        "table_size": (int, 2 ** 14),
        "hidden_layers": (int, 2),
        "hidden_width": (int, 64),
        "density_gain": (float, 10.0),
        "bounds_margin": (float, 0.5),
    },
    "schedule": {
        "recon_iters": (int, 4000),
        "gen_iters": (int, 2000),
        "warmup": (int, 250),
        "lr_start": (float, 5e-4),
        "lr_end": (float, 5e-6),
        "rgb_batch": (int, 2048),
        "lidar_batch": (int, 2048),
        "image_batch": (int, 4),
        "lr_gen": (float, 1e-4),
        "n_samples": (int, 128),
        "grad_clip": (float, 10.0),
        "log_every": (int, 10),
        "seed": (int, 0),
        "w_rgb": (float, 1.0),
        "w_label": (float, 0.2),
        "w_feat": (float, 0.2),
    },
    "raydrop": {
        "tau_gumbel": (float, 1.0),
        "extractor": (str, "probe"),
        "extractor_iters": (int, 200),
        "extractor_lr": (float, 3e-4),
        "threshold": (float, 0.5),
    },
    "eval": {
        "tau_acc": (float, 0.95),
        "recall_tau": (float, 0.5),
        "n_samples_sim": (int, 192),
        "probe_iters": (int, 200),
        "probe_lr": (float, 3e-4),
        "probe_batch": (int, 2),
    },
    "paths": {
        "out_dir": (str, "out"),
    },
}

DEFAULT_PRIMITIVES = (
    "plane road 0.35 0.33 0.3",
    "box vehicle 3.0 1.0 0.75 3.6 1.8 1.5 0.2 0.25 0.75",
    "sphere vegetation -3.0 -2.5 1.2 1.2 0.15 0.55 0.2",
)


def parse_primitive(spec):
    parts = spec.split()
    try:
        kind = parts[0]
        class_id = CLASS_NAMES.index(parts[1])
        nums = [float(x) for x in parts[2:]]
        if kind == "plane" and len(nums) == 3:
            return Primitive("plane", class_id, nums)
        if kind == "box" and len(nums) == 9:
            return Primitive("box", class_id, nums[6:9], center=nums[0:3],
                             size=nums[3:6])
        if kind == "sphere" and len(nums) == 7:
            return Primitive("sphere", class_id, nums[4:7], center=nums[0:3],
                             radius=nums[3])
    except (IndexError, ValueError) as e:
        raise ValueError(f"bad primitive spec {spec!r}: {e}") from None
    raise ValueError(f"bad primitive spec {spec!r}: wrong shape or arity")


def format_primitive(p):
    color = " ".join(_fmt(float(c)) for c in p.color)
    name = CLASS_NAMES[p.class_id]
    if p.kind == "plane":
        return f"plane {name} {color}"
    center = " ".join(_fmt(float(c)) for c in p.center)
    if p.kind == "box":
        size = " ".join(_fmt(float(c)) for c in p.size)
        return f"box {name} {center} {size} {color}"
    return f"sphere {name} {center} {_fmt(float(p.radius))} {color}"


@dataclass
class RunConfig:
    values: dict        # section -> key -> typed value
    primitives: tuple   # primitive spec strings

    # -- construction ------------------------------------------------------

    @classmethod
    def from_text(cls, text, path="<config>"):
        values = {s: {} for s in SCHEMA}
        prims = []
        section = None
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SCHEMA:
                    raise ConfigError(f"{path}:{ln}: unknown section [{section}]")
                continue
            if "=" not in line or section is None:
                raise ConfigError(f"{path}:{ln}: expected 'key = value' inside a section")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}:{ln}: unknown key [{section}] {key}")
            if section == "scene" and key == "primitive":
                prims.append(val)
                continue
            parser, _ = SCHEMA[section][key]
            try:
                values[section][key] = parser(val)
            except ValueError as e:
                raise ConfigError(f"{path}:{ln}: [{section}] {key}: {e}") from None
        for sec, keys in SCHEMA.items():
            for key, (parser, default) in keys.items():
                if parser is not None and key not in values[sec]:
                    values[sec][key] = default
        if not prims:
            prims = list(DEFAULT_PRIMITIVES)
        for p in prims:
            parse_primitive(p)  # validate early
        return cls(values, tuple(prims))

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_text(f.read(), path=str(path))

    @classmethod
    def defaults(cls):
        return cls.from_text("")

    def override_seed(self, seed):
        """--seed: overrides every seed in the configuration."""
        self.values["scene"]["seed"] = int(seed)
        self.values["scene"]["rule_seed"] = int(seed)
        self.values["schedule"]["seed"] = int(seed)

    # -- canonical text ------------------------------------------------------

    def render(self):
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key, (parser, _) in keys.items():
                if parser is None:
                    for p in self.primitives:
                        lines.append(f"primitive = {p}")
                    continue
                lines.append(f"{key} = {_fmt(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def echo(self, out_dir):
        path = os.path.join(out_dir, "config.resolved")
        with open(path, "w") as f:
            f.write(self.render())
        return path

    # -- typed views ---------------------------------------------------------

    def __getitem__(self, section):
        return self.values[section]

    def scene_config(self):
        s = self["scene"]
        b = np.array(s["bounds"]).reshape(2, 3)
        return SceneConfig(primitives=[parse_primitive(p) for p in self.primitives],
                           bounds=b, seed=s["seed"],
                           allow_absent_classes=s["allow_absent_classes"])

    def scene(self):
        return build_scene(self.scene_config())

    def rig(self):
        r = self["rig"]
        return LidarRig(channels=r["channels"], fov_down_deg=r["fov_down_deg"],
                        fov_up_deg=r["fov_up_deg"], width=r["width"],
                        spin_rate_hz=r["spin_rate_hz"], mount=np.array(r["mount"]))

    def field_bounds(self):
        s = np.array(self["scene"]["bounds"]).reshape(2, 3)
        m = self["field"]["bounds_margin"]
        return np.array([s[0] - m, s[1] + m])

    def field_config(self):
        f = self["field"]
        return FieldConfig(levels=f["levels"], base_resolution=f["base_resolution"],
                           max_resolution=f["max_resolution"],
                           features_per_level=f["features_per_level"],
                           table_size=f["table_size"], bounds=self.field_bounds(),
                           hidden_layers=f["hidden_layers"],
                           hidden_width=f["hidden_width"],
                           density_gain=f["density_gain"])

    def schedule(self):
        s = self["schedule"]
        r = self["raydrop"]
        return TrainSchedule(recon_iters=s["recon_iters"], gen_iters=s["gen_iters"],
                             warmup=s["warmup"], lr_start=s["lr_start"],
                             lr_end=s["lr_end"], rgb_batch=s["rgb_batch"],
                             lidar_batch=s["lidar_batch"], image_batch=s["image_batch"],
                             lr_gen=s["lr_gen"], n_samples=s["n_samples"],
                             tau_gumbel=r["tau_gumbel"], grad_clip=s["grad_clip"],
                             log_every=s["log_every"], seed=s["seed"])

    def weights(self):
        s = self["schedule"]
        return LossWeights(rgb=s["w_rgb"], label=s["w_label"], feat=s["w_feat"])

    def raydrop_rule(self):
        s = self["scene"]
        return RaydropRule(incidence_threshold=np.radians(s["rule_incidence_deg"]),
                           per_class_drop_prob=np.array(s["rule_class_drop"]),
                           range_r0=s["rule_range_r0"], range_p_max=s["rule_range_pmax"],
                           seed=s["rule_seed"])

    def probe_config(self):
        e = self["eval"]
        return ProbeConfig(iterations=e["probe_iters"], lr=e["probe_lr"],
                           batch=e["probe_batch"], seed=self["schedule"]["seed"])
