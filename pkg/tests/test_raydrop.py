import numpy as np
import pytest

import lidarfield.autodiff as ad
from lidarfield.autodiff import Tensor
from lidarfield.equirect import project
from lidarfield.lidar import EgoState, LidarRig
from lidarfield.oracle import sample_oracle_lidar
from lidarfield.raydrop import (PYRAMID_WEIGHTS, RaydropNet, apply_mask, feature_loss,
                                gumbel_sample, inference_mask, mask_loss,
                                probe_channels, raydrop_forward,
                                train_feature_extractor, unet_channels)

from helpers import three_primitive_scene

RIG = LidarRig(channels=8, width=64)


def sample_image():
    scan = sample_oracle_lidar(three_primitive_scene(half=6.0, zmax=4.0), RIG,
                               EgoState((0.2, -0.4, 1.6)))
    return project(scan, RIG), scan


class TestForward:
    def test_zero_net_gives_half_probabilities(self):
        net = RaydropNet.init(seed=0)
        for _, t in net.named_params():
            t.value[:] = 0.0
        img, _ = sample_image()
        logits = raydrop_forward(net, unet_channels(img))
        np.testing.assert_array_equal(logits.value, 0.0)
        mask = inference_mask(logits.value)
        np.testing.assert_array_equal(mask.probabilities, 0.5)

    def test_azimuthal_shift_equivariance(self):
        net = RaydropNet.init(seed=1)
        img, _ = sample_image()
        ch = unet_channels(img)
        shift = 16  # multiple of the total pooling stride (8)
        out = raydrop_forward(net, ch).value[0]
        out_shifted = raydrop_forward(net, np.roll(ch, shift, axis=1)).value[0]
        np.testing.assert_allclose(out_shifted, np.roll(out, shift, axis=1),
                                   atol=1e-10)

    def test_wrong_channel_count_rejected(self):
        net = RaydropNet.init(seed=0)
        with pytest.raises(ValueError, match="channels"):
            raydrop_forward(net, np.zeros((8, 64, 5)))

    def test_conv_gradients_match_fd(self):
        net = RaydropNet.init(seed=2)
        img, scan = sample_image()
        # push biases into general position: relu kinks otherwise sit inside
        # the finite-difference window and poison the comparison
        rng = np.random.default_rng(9)
        for name, t in net.named_params():
            if name.endswith(".b"):
                t.value[:] = rng.uniform(0.15, 0.45, size=t.value.shape) \
                    * rng.choice([-1, 1], size=t.value.shape)
        ch = unet_channels(img)
        m_gt = scan.valid & (rng.uniform(size=scan.valid.shape) < 0.7)

        def loss():
            logits = raydrop_forward(net, ch)
            return mask_loss(ad.reshape(logits, scan.valid.shape), m_gt, scan.valid)

        params = [t for _, t in net.named_params()]
        assert ad.finite_diff_check(loss, params, max_coords=150, seed=3) < 1e-5


class TestGumbel:
    def test_extreme_logit_always_keeps(self):
        logits = Tensor(np.full((100, 100), 40.0))
        mask = gumbel_sample(logits, tau=1.0, seed=0)
        assert mask.hard.all()

    def test_zero_logit_keep_rate_half(self):
        logits = Tensor(np.zeros((100, 100)))
        mask = gumbel_sample(logits, tau=1.0, seed=1)
        assert abs(mask.hard.mean() - 0.5) < 0.02

    def test_deterministic_per_seed(self):
        logits = Tensor(np.random.default_rng(2).normal(size=(32, 32)))
        a = gumbel_sample(logits, tau=1.0, seed=7)
        b = gumbel_sample(logits, tau=1.0, seed=7)
        np.testing.assert_array_equal(a.hard, b.hard)

    def test_straight_through_gradient_flows(self):
        logits = Tensor(np.random.default_rng(3).normal(size=(8, 8)),
                        requires_grad=True)
        mask = gumbel_sample(logits, tau=1.0, seed=4)
        ad.reduce_sum(ad.mul(mask.keep, Tensor(np.random.default_rng(5)
                                               .normal(size=(8, 8))))).backward()
        assert logits.grad is not None and np.abs(logits.grad).max() > 0


class TestMaskLoss:
    def test_perfect_logits_vanish(self):
        m = np.random.default_rng(0).uniform(size=(16, 16)) < 0.5
        logits = Tensor(np.where(m, 40.0, -40.0))
        loss = mask_loss(logits, m, np.ones((16, 16), dtype=bool))
        assert loss.value < 1e-12

    def test_zero_logits_give_ln2(self):
        m = np.random.default_rng(1).uniform(size=(16, 16)) < 0.3
        loss = mask_loss(Tensor(np.zeros((16, 16))), m, np.ones((16, 16), dtype=bool))
        assert loss.value == pytest.approx(np.log(2.0), abs=1e-12)

    def test_all_true_mask_constant_logit_closed_form(self):
        c = 1.7
        loss = mask_loss(Tensor(np.full((8, 8), -c)), np.ones((8, 8), dtype=bool),
                         np.ones((8, 8), dtype=bool))
        assert loss.value == pytest.approx(np.logaddexp(0, c), rel=1e-12)

    def test_restricted_to_domain(self):
        logits = Tensor(np.zeros((4, 4)))
        m = np.zeros((4, 4), dtype=bool)
        domain = np.zeros((4, 4), dtype=bool)
        domain[0, 0] = True
        loss = mask_loss(logits, m, domain)
        assert loss.value == pytest.approx(np.log(2.0), abs=1e-12)
        with pytest.raises(ValueError, match="empty"):
            mask_loss(logits, m, np.zeros((4, 4), dtype=bool))


class StubPyramid:
    def __init__(self, levels):
        self.levels = levels

    def features(self, channels):
        return [ad.as_tensor(l) for l in self.levels]

    def feature_values(self, channels):
        return list(self.levels)


class TestFeatureLoss:
    def test_identical_inputs_zero(self):
        img, _ = sample_image()
        pyr = train_feature_extractor([], [], [], RIG, kind="random", seed=0)
        ch = probe_channels(img, RIG)[None]
        loss = feature_loss(pyr, Tensor(ch), pyr.feature_values(ch))
        assert loss.value == 0.0

    def test_level_weights_sum(self):
        levels = [np.zeros((1, 2, 2, 1)) for _ in range(4)]
        sim_levels = [np.ones((1, 2, 2, 1)) for _ in range(4)]
        pyr = StubPyramid(sim_levels)
        loss = feature_loss(pyr, Tensor(np.zeros((1, 2, 2, 1))), levels)
        assert loss.value == pytest.approx(sum(PYRAMID_WEIGHTS), abs=1e-15)
        assert sum(PYRAMID_WEIGHTS) == pytest.approx(1.875)

    def test_monotone_along_interpolation_path(self):
        img, scan = sample_image()
        pyr = train_feature_extractor([], [], [], RIG, kind="random", seed=2)
        real = probe_channels(img, RIG)[None]
        rng = np.random.default_rng(3)
        sim = real + rng.normal(scale=0.5, size=real.shape)
        real_levels = pyr.feature_values(real)
        losses = []
        for alpha in np.linspace(0, 1, 5):
            x = (1 - alpha) * sim + alpha * real
            losses.append(float(feature_loss(pyr, Tensor(x), real_levels).value))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] == pytest.approx(0.0, abs=1e-12)


class TestApplyMask:
    def test_all_keep_identity(self):
        _, scan = sample_image()
        out = apply_mask(scan, np.ones(scan.valid.shape, dtype=bool))
        np.testing.assert_array_equal(out.valid, scan.valid)
        np.testing.assert_array_equal(out.points, scan.points)

    def test_all_drop(self):
        _, scan = sample_image()
        out = apply_mask(scan, np.zeros(scan.valid.shape, dtype=bool))
        assert out.n_valid() == 0

    def test_popcount_matches(self):
        _, scan = sample_image()
        keep = np.random.default_rng(4).uniform(size=scan.valid.shape) < 0.4
        out = apply_mask(scan, keep)
        assert out.n_valid() == int((keep & scan.valid).sum())

    def test_never_resurrects_invalid_cells(self):
        _, scan = sample_image()
        out = apply_mask(scan, np.ones(scan.valid.shape, dtype=bool))
        assert not (out.valid & ~scan.valid).any()


class TestFeatureExtractor:
    def test_random_pyramid_is_frozen_and_layered(self):
        pyr = train_feature_extractor([], [], [], RIG, kind="random", seed=0)
        assert all(not t.requires_grad for t in pyr.params.values())
        img, _ = sample_image()
        feats = pyr.feature_values(probe_channels(img, RIG)[None])
        widths = [f.shape[2] for f in feats]
        assert len(feats) == 4
        assert all(b < a for a, b in zip(widths, widths[1:]))

    def test_probe_kind_requires_twenty_images(self):
        with pytest.raises(ValueError, match="20"):
            train_feature_extractor([np.zeros((8, 64, 5))] * 3, [None] * 3, [None] * 3,
                                    RIG, kind="probe")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            train_feature_extractor([], [], [], RIG, kind="vgg")
