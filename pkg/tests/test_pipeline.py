import numpy as np
import pytest
import torch

from lens.config import RunConfig
from lens.pipeline import LensPipeline, nearest_upsample
from lens.synthetic import BlobTask


def small_config(**overrides):
    defaults = dict(grid=(8, 8), d=16, d_s=16, head_count=4, m=4)
    defaults.update(overrides)
    return RunConfig(**defaults)


@pytest.fixture
def setup(rng):
    config = small_config()
    task = BlobTask(config, seed=0)
    sample = task.generate(np.random.default_rng(11))
    pipeline = LensPipeline(config)
    pipeline.reset_parameters(0)
    return config, pipeline, sample


class TestForward:
    def test_output_shapes(self, setup):
        config, pipeline, sample = setup
        with torch.no_grad():
            out = pipeline(sample)
        assert out.a_c1.shape == (8, 8)
        assert out.heatmap.shape == (8, 8)
        assert len(out.keypoints) <= config.m
        assert out.logits.shape == (32, 32)
        assert out.mask_prob.shape == (32, 32)
        assert float(out.mask_prob.min()) >= 0.0
        assert float(out.mask_prob.max()) <= 1.0

    def test_deterministic(self, setup):
        _, pipeline, sample = setup
        with torch.no_grad():
            a = pipeline(sample)
            b = pipeline(sample)
        assert torch.equal(a.logits, b.logits)
        assert [(p.x, p.y) for p in a.keypoints] == [(p.x, p.y) for p in b.keypoints]

    def test_fixed_points_bypass_selection(self, setup):
        _, pipeline, sample = setup
        with torch.no_grad():
            base = pipeline(sample)
            again = pipeline(sample, fixed_points=base.keypoints)
        assert again.keypoints is base.keypoints
        assert torch.equal(again.logits, base.logits)

    def test_global_only_ignores_keypoints(self, setup):
        """With use_locals=False the prompt bundle is the single global token,
        so the mask does not depend on the keypoint set."""
        _, pipeline, sample = setup
        from lens.keypoint import Keypoint
        with torch.no_grad():
            a = pipeline(sample, use_locals=False)
            b = pipeline(sample, use_locals=False,
                         fixed_points=[Keypoint(1.0, 1.0, 0.5)])
        assert torch.equal(a.logits, b.logits)

    def test_losses_structure(self, setup):
        config, pipeline, sample = setup
        losses = pipeline.losses(sample)
        assert set(losses) == {"attn", "dice", "bce", "seg", "total"}
        lw = config.loss
        seg = (lw.lambda_dice * losses["dice"] + lw.lambda_bce * losses["bce"]).item()
        assert losses["seg"].item() == pytest.approx(seg, abs=1e-12)
        total = (losses["seg"] + losses["attn"]).item()
        assert losses["total"].item() == pytest.approx(total, abs=1e-12)

    def test_frozen_decoder_flag(self):
        config = small_config(decoder_trainable=False)
        pipeline = LensPipeline(config)
        assert all(not p.requires_grad for p in pipeline.decoder.parameters())
        assert pipeline.cls_position.requires_grad


class TestNearestUpsample:
    def test_blocks(self):
        up = nearest_upsample(np.array([[1.0, 0.0]]), 2)
        assert np.array_equal(up, [[1, 1, 0, 0], [1, 1, 0, 0]])

    def test_inverse_by_subsampling(self, rng):
        mask = (rng.uniform(size=(5, 7)) > 0.5).astype(float)
        up = nearest_upsample(mask, 4)
        assert np.array_equal(up[::4, ::4], mask)


class TestBlobTask:
    def test_sample_shapes(self, setup):
        config, _, sample = setup
        assert sample.f_i.shape == (64, 16)
        assert sample.f_t.shape == (3, 16)
        assert sample.gt_small.shape == (8, 8)
        assert sample.gt_mask.shape == (32, 32)
        assert sample.image_embedding.shape == (8, 8, 16)

    def test_gt_mask_is_upsampled_gt_small(self, setup):
        _, _, sample = setup
        up = nearest_upsample(sample.gt_small.numpy(), 4)
        assert np.array_equal(sample.gt_mask.numpy(), up)

    def test_target_always_nonempty(self):
        config = small_config()
        task = BlobTask(config, seed=3)
        rng = np.random.default_rng(5)
        for _ in range(25):
            s = task.generate(rng)
            assert float(s.gt_small.sum()) > 0

    def test_generation_deterministic_under_seed(self):
        config = small_config()
        task = BlobTask(config, seed=1)
        a = task.generate(np.random.default_rng(9))
        b = BlobTask(config, seed=1).generate(np.random.default_rng(9))
        assert torch.equal(a.f_i, b.f_i)
        assert torch.equal(a.gt_mask, b.gt_mask)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            small_config(d=15)
        with pytest.raises(ValueError):
            small_config(window=2)
        with pytest.raises(ValueError):
            small_config(d_s=15, d=16)

    def test_seed_env_override(self, monkeypatch):
        monkeypatch.setenv("LENS_SEED", "99")
        assert small_config(seed=3).seed == 99

    def test_loss_weight_validation(self):
        from lens.config import LossWeights
        with pytest.raises(ValueError):
            LossWeights(lambda_dice=-1.0)
        with pytest.raises(ValueError):
            LossWeights(clamp_eps=0.7)
