import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from deblurlab import (
    ConfigError,
    FeatureExtractorConfig,
    LossWeights,
    ParameterError,
    ShapeError,
    build_discriminator,
    critic_loss,
    extract_features,
    feature_loss,
    generator_adv_loss,
    gradient_penalty,
    init_discriminator,
    l2_loss,
    make_feature_extractor,
    total_generator_loss,
)
from deblurlab.losses import LAMBDA_2_SUM_CONVENTION, critic_loss_parts

from oracles import fd_gradient_scalar, relative_error


class LinearCritic(nn.Module):
    """D(x) = scale * <w, x> per sample; input-gradient norm is scale * ||w||."""

    def __init__(self, w: torch.Tensor, scale: float = 1.0):
        super().__init__()
        self.w = w
        self.scale = scale

    def forward(self, x):
        return self.scale * (x * self.w).flatten(1).sum(dim=1)


@pytest.fixture
def unit_direction():
    w = torch.from_numpy(np.random.default_rng(0).standard_normal((3, 12, 12)))
    return w / w.flatten().norm()


def _batches(seed=1, n=4, side=12):
    rng = np.random.default_rng(seed)
    real = torch.from_numpy(rng.uniform(-1, 1, (n, 3, side, side)))
    fake = torch.from_numpy(rng.uniform(-1, 1, (n, 3, side, side)))
    return real, fake


class TestGradientPenalty:
    def test_unit_gradient_critic_gives_zero(self, unit_direction):
        real, fake = _batches()
        gp = gradient_penalty(LinearCritic(unit_direction), real, fake, rng=0)
        assert abs(float(gp)) < 1e-12

    def test_double_gradient_critic_gives_one(self, unit_direction):
        real, fake = _batches()
        gp = gradient_penalty(LinearCritic(unit_direction, scale=2.0), real, fake, rng=0)
        assert abs(float(gp) - 1.0) < 1e-12

    @pytest.mark.parametrize("g", [0.25, 0.5, 1.5, 3.0])
    def test_constant_gradient_calibration(self, unit_direction, g):
        real, fake = _batches(seed=2)
        gp = gradient_penalty(LinearCritic(unit_direction, scale=g), real, fake, rng=1)
        assert abs(float(gp) - (g - 1.0) ** 2) < 1e-6

    def test_nonnegative(self, tiny_disc_config):
        critic = build_discriminator(init_discriminator(tiny_disc_config, 0, "float64"))
        real, fake = _batches(seed=3, side=16)
        assert float(gradient_penalty(critic, real, fake, rng=4).detach()) >= 0.0

    def test_shape_mismatch_rejected(self, unit_direction):
        real, _ = _batches()
        with pytest.raises(ShapeError):
            gradient_penalty(LinearCritic(unit_direction), real, real[:2], rng=0)

    def test_inner_gradient_matches_finite_differences(self, tiny_disc_config):
        critic = build_discriminator(init_discriminator(tiny_disc_config, 3, "float64"))
        rng = np.random.default_rng(5)
        x = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, 3, 16, 16))).requires_grad_(True)
        analytic = torch.autograd.grad(critic(x).sum(), x)[0]

        def scalar():
            with torch.no_grad():
                return critic(x).sum()

        fd = fd_gradient_scalar(scalar, x, h=1e-5)
        assert relative_error(fd, analytic.numpy().flatten()) < 1e-4


class TestCriticLoss:
    def test_equal_scores_zero_penalty_weight(self, unit_direction):
        real, _ = _batches()
        loss = critic_loss(LinearCritic(unit_direction), real, real.clone(), 0.0, rng=0)
        assert abs(float(loss)) < 1e-12

    def test_default_penalty_weight_is_ten(self):
        assert LossWeights().lambda_gp == 10.0

    def test_hand_arithmetic_on_formula(self):
        # D(x) = 2 * x[first element]; choose batches so mean scores are 3
        # and 1; gradient norm is 2 everywhere so the penalty is exactly 1:
        # loss = -(3 - 1) + 10 * 1 = 8.
        w = torch.zeros(3, 8, 8, dtype=torch.float64)
        w[0, 0, 0] = 1.0
        critic = LinearCritic(w, scale=2.0)
        real = torch.zeros(2, 3, 8, 8, dtype=torch.float64)
        fake = torch.zeros(2, 3, 8, 8, dtype=torch.float64)
        real[:, 0, 0, 0] = 1.5
        fake[:, 0, 0, 0] = 0.5
        total, adv_d, gp = critic_loss_parts(critic, real, fake, 10.0, rng=0)
        assert abs(float(adv_d) - (-2.0)) < 1e-12
        assert abs(float(gp) - 1.0) < 1e-12
        assert abs(float(total) - 8.0) < 1e-12

    def test_parts_compose(self, tiny_disc_config):
        critic = build_discriminator(init_discriminator(tiny_disc_config, 1, "float64"))
        real, fake = _batches(seed=6, side=16)
        total, adv_d, gp = critic_loss_parts(critic, real, fake, 10.0, rng=7)
        total, adv_d, gp = (float(t.detach()) for t in (total, adv_d, gp))
        assert abs(total - (adv_d + 10.0 * gp)) < 1e-9


class TestGeneratorAdvLoss:
    def test_examples(self):
        assert float(generator_adv_loss(torch.zeros(4))) == 0.0
        assert float(generator_adv_loss(torch.full((3,), 2.5))) == -2.5
        assert float(generator_adv_loss(torch.tensor([1.0, 3.0]))) == -2.0

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            generator_adv_loss(torch.zeros(0))


class TestExtractFeatures:
    def test_tap_ladder_sizes(self, tiny_extractor_config):
        ext = make_feature_extractor(tiny_extractor_config, "float64")
        x = torch.rand(1, 3, 64, 64, dtype=torch.float64) * 2 - 1
        taps = extract_features(ext, x)
        assert [t.shape[2] for t in taps] == [32, 16, 8, 4]

    def test_identical_inputs_identical_features(self, tiny_extractor_config):
        ext = make_feature_extractor(tiny_extractor_config, "float64")
        x = torch.rand(1, 3, 32, 32, dtype=torch.float64) * 2 - 1
        a = extract_features(ext, x)
        b = extract_features(ext, x.clone())
        for fa, fb in zip(a, b):
            assert torch.equal(fa, fb)

    def test_seeded_random_weights_reproducible(self, tiny_extractor_config):
        ext1 = make_feature_extractor(tiny_extractor_config, "float64")
        ext2 = make_feature_extractor(tiny_extractor_config, "float64")
        x = torch.rand(1, 3, 32, 32, dtype=torch.float64) * 2 - 1
        for fa, fb in zip(extract_features(ext1, x), extract_features(ext2, x)):
            assert torch.equal(fa, fb)

    def test_too_small_input_names_deepest_tap(self, tiny_extractor_config):
        ext = make_feature_extractor(tiny_extractor_config, "float64")
        with pytest.raises(ShapeError, match="conv5_4"):
            ext(torch.zeros(1, 3, 16, 16, dtype=torch.float64))

    def test_weights_file_round_trip(self, tiny_extractor_config, tmp_path):
        from deblurlab.features import extractor_store

        ext = make_feature_extractor(tiny_extractor_config, "float64")
        path = tmp_path / "extractor.ntck"
        extractor_store(ext).save(path)
        cfg = FeatureExtractorConfig(
            weights_source=str(path), base_width=tiny_extractor_config.base_width
        )
        ext2 = make_feature_extractor(cfg, "float64")
        x = torch.rand(1, 3, 32, 32, dtype=torch.float64) * 2 - 1
        for fa, fb in zip(ext(x), ext2(x)):
            assert torch.equal(fa, fb)


class ToyTap(nn.Module):
    """Single 1x1-conv tap with fixed weights; stands in for the extractor."""

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 2, 1, bias=False).double()
        with torch.no_grad():
            self.conv.weight.copy_(
                torch.tensor([[[[1.0]], [[2.0]], [[3.0]]], [[[0.5]], [[-1.0]], [[0.0]]]])
            )

    def forward(self, x):
        return [self.conv(x)]


class TestFeatureLoss:
    def test_zero_on_identical(self, tiny_extractor_config):
        ext = make_feature_extractor(tiny_extractor_config, "float64")
        x = torch.rand(1, 3, 32, 32, dtype=torch.float64) * 2 - 1
        assert float(feature_loss(ext, x, x.clone(), LossWeights().layer_weights)) == 0.0

    def test_default_layer_weights(self):
        assert LossWeights().layer_weights == (0.2, 0.4, 0.2, 0.2)
        assert abs(sum(LossWeights().layer_weights) - 1.0) < 1e-9

    def test_toy_single_tap_hand_computed(self):
        toy = ToyTap()
        a = torch.tensor([[[[0.1, 0.2], [0.3, 0.4]],
                           [[0.0, 0.1], [0.2, 0.3]],
                           [[0.5, 0.5], [0.5, 0.5]]]], dtype=torch.float64)
        b = torch.zeros_like(a)
        with torch.no_grad():
            fa = toy(a)[0]
            fb = toy(b)[0]
        expected = float(((fa - fb) ** 2).mean())
        # independent hand computation: channel taps are linear combinations
        w = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]])
        diff = a.numpy()[0]  # b is zero
        feats = np.einsum("kc,chw->khw", w, diff)
        by_hand = float((feats**2).mean())
        assert abs(expected - by_hand) < 1e-12
        assert abs(float(feature_loss(toy, a, b, (1.0,)).detach()) - by_hand) < 1e-12

    def test_weight_count_mismatch_rejected(self):
        toy = ToyTap()
        x = torch.zeros(1, 3, 2, 2, dtype=torch.float64)
        with pytest.raises(ConfigError):
            feature_loss(toy, x, x, (0.5, 0.5))

    def test_symmetry(self, tiny_extractor_config):
        ext = make_feature_extractor(tiny_extractor_config, "float64")
        rng = np.random.default_rng(8)
        a = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 32, 32)))
        b = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 32, 32)))
        w = LossWeights().layer_weights
        assert float(feature_loss(ext, a, b, w)) == pytest.approx(
            float(feature_loss(ext, b, a, w)), rel=1e-12
        )
        assert float(feature_loss(ext, a, b, w)) >= 0.0


class TestL2Loss:
    def test_examples(self):
        a = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        assert float(l2_loss(a, a.clone())) == 0.0
        assert float(l2_loss(a + 0.5, a)) == pytest.approx(0.25, abs=1e-12)
        b = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        assert float(l2_loss(a + 2 * (b - a), a)) == pytest.approx(
            4.0 * float(l2_loss(b, a)), rel=1e-12
        )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            l2_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_symmetry_nonnegativity_zero_law(self, seed):
        rng = np.random.default_rng(seed)
        a = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 4, 4)))
        b = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 4, 4)))
        assert float(l2_loss(a, b)) == float(l2_loss(b, a))
        assert float(l2_loss(a, b)) >= 0.0
        assert float(l2_loss(a, a.clone())) == 0.0


class TestTotalGeneratorLoss:
    def test_zeros(self):
        assert total_generator_loss(0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_default_lambda_x_is_one(self):
        assert LossWeights().lambda_x == 1.0

    def test_hand_arithmetic(self):
        w = LossWeights(lambda_x=1.0, lambda_2=100.0)
        assert total_generator_loss(1.0, 0.5, 0.001, w) == pytest.approx(1.6, abs=1e-12)

    def test_affine_in_each_lambda(self):
        adv, feat, l2 = 0.7, 0.3, 0.02
        for lam in (0.0, 1.0, 5.0):
            base = total_generator_loss(adv, feat, l2, LossWeights(lambda_x=lam, lambda_2=0.0))
            bumped = total_generator_loss(adv, feat, l2, LossWeights(lambda_x=lam + 1, lambda_2=0.0))
            assert bumped - base == pytest.approx(feat, rel=1e-12)
            base2 = total_generator_loss(adv, feat, l2, LossWeights(lambda_2=lam))
            bumped2 = total_generator_loss(adv, feat, l2, LossWeights(lambda_2=lam + 1))
            assert bumped2 - base2 == pytest.approx(l2, rel=1e-12)

    def test_published_sum_convention_weight_documented(self):
        assert LAMBDA_2_SUM_CONVENTION == 1e6
        assert LossWeights().lambda_2 == 100.0


class TestLossWeightsValidation:
    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(lambda_gp=-1.0)

    def test_layer_weights_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            LossWeights(layer_weights=(0.5, 0.5, 0.5, 0.5))
