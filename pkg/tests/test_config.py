import numpy as np
import pytest

from lidarfield.config import ConfigError, RunConfig, format_primitive, parse_primitive


class TestParsing:
    def test_defaults_resolve(self):
        cfg = RunConfig.defaults()
        assert cfg["schedule"]["recon_iters"] == 4000
        assert cfg["schedule"]["lr_start"] == 5e-4
        assert cfg["rig"]["channels"] == 32
        assert cfg["schedule"]["w_rgb"] == 1.0

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match=r"\[schedule\] bogus"):
            RunConfig.from_text("[schedule]\nbogus = 3\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match=r"\[mystery\]"):
            RunConfig.from_text("[mystery]\nx = 1\n")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match=r"\[schedule\] recon_iters"):
            RunConfig.from_text("[schedule]\nrecon_iters = lots\n")

    def test_key_outside_section_rejected(self):
        with pytest.raises(ConfigError, match="section"):
            RunConfig.from_text("x = 1\n")

    def test_comments_and_blanks_ignored(self):
        cfg = RunConfig.from_text("# hello\n[schedule]\nseed = 4  # trailing\n\n")
        assert cfg["schedule"]["seed"] == 4

    def test_repeated_primitive_lines_collect(self):
        cfg = RunConfig.from_text(
            "[scene]\nprimitive = plane road 0.3 0.3 0.3\n"
            "primitive = sphere vehicle 1 1 1 0.5 0.6 0.6 0.6\n")
        assert len(cfg.primitives) == 2
        scene = cfg.scene()
        assert [p.kind for p in scene.primitives] == ["plane", "sphere"]


class TestEchoIdempotence:
    def test_render_reparses_identically(self):
        cfg = RunConfig.from_text(
            "[schedule]\nrecon_iters = 123\nlr_start = 0.00037\n"
            "[scene]\nseed = 9\nbounds = -4 -4 0 4 4 3\n")
        text = cfg.render()
        again = RunConfig.from_text(text)
        assert again.values == cfg.values
        assert again.primitives == cfg.primitives
        assert again.render() == text

    def test_echo_writes_resolved_file(self, tmp_path):
        cfg = RunConfig.defaults()
        path = cfg.echo(str(tmp_path))
        again = RunConfig.from_file(path)
        assert again.values == cfg.values


class TestSeedOverride:
    def test_overrides_all_seeds(self):
        cfg = RunConfig.from_text("[scene]\nseed = 1\nrule_seed = 2\n"
                                  "[schedule]\nseed = 3\n")
        cfg.override_seed(42)
        assert cfg["scene"]["seed"] == 42
        assert cfg["scene"]["rule_seed"] == 42
        assert cfg["schedule"]["seed"] == 42


class TestPrimitives:
    def test_round_trip(self):
        for spec in ("plane road 0.3 0.3 0.3",
                     "box vehicle 1.0 2.0 0.5 2.0 1.0 1.0 0.2 0.2 0.8",
                     "sphere vegetation -1.0 0.5 1.0 0.75 0.1 0.6 0.2"):
            p = parse_primitive(spec)
            assert parse_primitive(format_primitive(p)).kind == p.kind

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError, match="primitive"):
            parse_primitive("cylinder road 0.3 0.3 0.3")
        with pytest.raises(ValueError, match="primitive"):
            parse_primitive("box notaclass 1 1 1 1 1 1 0.5 0.5 0.5")


class TestTypedViews:
    def test_domain_objects_build(self):
        cfg = RunConfig.defaults()
        scene = cfg.scene()
        assert len(scene.primitives) == 3
        rig = cfg.rig()
        assert rig.channels == 32 and rig.width == 1024
        fc = cfg.field_config()
        np.testing.assert_allclose(fc.bounds[0], np.array([-10.5, -10.5, -0.5]))
        sched = cfg.schedule()
        assert sched.recon_iters == 4000
        rule = cfg.raydrop_rule()
        assert rule.per_class_drop_prob[1] == 0.8
