import math
from collections import OrderedDict

import pytest
import torch

from robust_finetune.childtune import GradientMask, MaskConfig, apply_mask, sample_mask
from robust_finetune.trainer import OptimizerState, adamw_step


class TestSampleMask:
    def test_keep_probability_one_gives_all_ones(self):
        mask = sample_mask({"w": (50, 40)}, MaskConfig(p_f=1.0, rng_seed=3), step=0)
        assert torch.equal(mask.tensors["w"], torch.ones(50, 40))

    @pytest.mark.parametrize("p_f", [0.1, 0.3, 0.5])
    def test_ones_fraction_within_binomial_bound(self, p_f):
        n = 10**6
        mask = sample_mask({"w": (n,)}, MaskConfig(p_f=p_f, rng_seed=11), step=0)
        ones = float(mask.tensors["w"].sum())
        sigma = math.sqrt(n * p_f * (1 - p_f))
        assert abs(ones - n * p_f) < 4 * sigma

    def test_same_seed_and_step_identical(self):
        cfg = MaskConfig(p_f=0.4, rng_seed=7)
        a = sample_mask({"w": (100, 100)}, cfg, step=5)
        b = sample_mask({"w": (100, 100)}, cfg, step=5)
        assert torch.equal(a.tensors["w"], b.tensors["w"])

    def test_fresh_mask_every_step(self):
        cfg = MaskConfig(p_f=0.5, rng_seed=7)
        a = sample_mask({"w": (100000,)}, cfg, step=0)
        b = sample_mask({"w": (100000,)}, cfg, step=1)
        hamming = float((a.tensors["w"] != b.tensors["w"]).sum())
        assert hamming > 0

    def test_entries_are_binary(self):
        mask = sample_mask({"w": (64, 64)}, MaskConfig(p_f=0.3, rng_seed=1), step=2)
        values = set(mask.tensors["w"].unique().tolist())
        assert values <= {0.0, 1.0}

    def test_target_pattern_filters_names(self):
        shapes = {"embeddings.token": (4, 4), "classifier.weight": (4, 2)}
        mask = sample_mask(shapes, MaskConfig(p_f=0.5, rng_seed=1, target_names="classifier.*"), 0)
        assert list(mask.tensors) == ["classifier.weight"]

    @pytest.mark.parametrize("p_f", [0.0, -0.1, 1.5])
    def test_invalid_keep_probability_rejected(self, p_f):
        with pytest.raises(ValueError, match="p_f"):
            MaskConfig(p_f=p_f)

    def test_expected_masked_gradient(self):
        # E[g * B] = p_f * g, estimated over many sampled masks.
        grad = torch.linspace(0.5, 2.0, steps=200)
        cfg = MaskConfig(p_f=0.3, rng_seed=13)
        total = torch.zeros_like(grad)
        samples = 10**4
        for step in range(samples):
            mask = sample_mask({"g": tuple(grad.shape)}, cfg, step)
            total += grad * mask.tensors["g"]
        mean = total / samples
        rel = ((mean - 0.3 * grad).abs() / (0.3 * grad)).max().item()
        assert rel < 0.05


class TestApplyMask:
    def test_all_ones_mask_is_identity(self):
        grads = OrderedDict([("w", torch.randn(8, 8, generator=torch.Generator().manual_seed(0)))])
        mask = GradientMask(OrderedDict([("w", torch.ones(8, 8))]))
        out = apply_mask(grads, mask)
        assert torch.equal(out["w"], grads["w"])

    def test_all_zeros_mask_gives_weight_decay_only_step(self):
        torch.manual_seed(0)
        params = OrderedDict([("w", torch.randn(6))])
        before = params["w"].clone()
        grads = OrderedDict([("w", torch.randn(6))])
        masked = apply_mask(grads, GradientMask(OrderedDict([("w", torch.zeros(6))])))
        assert torch.equal(masked["w"], torch.zeros(6))
        opt = OptimizerState.for_params(params, weight_decay=0.01)
        adamw_step(params, masked, opt, lr=0.1)
        expected = before - 0.1 * 0.01 * before
        assert torch.equal(params["w"], expected)

    def test_untargeted_gradients_pass_through(self):
        grads = OrderedDict([("a", torch.ones(3)), ("b", torch.ones(3))])
        mask = GradientMask(OrderedDict([("a", torch.zeros(3))]))
        out = apply_mask(grads, mask)
        assert torch.equal(out["a"], torch.zeros(3))
        assert out["b"] is grads["b"]

    def test_shape_mismatch_rejected(self):
        grads = OrderedDict([("w", torch.ones(3))])
        mask = GradientMask(OrderedDict([("w", torch.ones(4))]))
        with pytest.raises(ValueError, match="shape"):
            apply_mask(grads, mask)
