"""Unit tests for the frozen surrogate backbone."""

import numpy as np
import pytest

from foro.backbone import (
    BackboneConfig,
    DimensionMismatchError,
    EmptyBatchError,
    InvalidConfigError,
    backbone_build,
)

REF = BackboneConfig(layers=4, embed_dim=16, patches=8, heads=2, seed=42)


@pytest.fixture(scope="module")
def bb():
    return backbone_build(REF)


class TestBuild:
    def test_checksum_determinism(self):
        assert backbone_build(REF).checksum() == backbone_build(REF).checksum()

    def test_checksum_changes_with_seed(self):
        import dataclasses

        other = backbone_build(dataclasses.replace(REF, seed=43))
        assert other.checksum() != backbone_build(REF).checksum()

    def test_reference_shape(self, bb):
        patches = np.random.default_rng(0).standard_normal((8, 16))
        trace = bb.forward(np.zeros((3, 16)), patches)
        assert trace.cls_per_layer.shape == (4, 16)
        assert trace.final_cls.shape == (16,)

    def test_heads_must_divide_embed_dim(self):
        with pytest.raises(InvalidConfigError):
            backbone_build(BackboneConfig(embed_dim=16, heads=3))


class TestForward:
    def test_empty_prompts(self, bb):
        patches = np.random.default_rng(1).standard_normal((8, 16))
        a = bb.forward(np.zeros((0, 16)), patches)
        b = bb.forward(np.zeros((0, 16)), patches)
        assert bb.token_count(0) == 1 + 8
        assert np.array_equal(a.final_cls, b.final_cls)

    def test_purity(self, bb):
        rng = np.random.default_rng(2)
        prompts = rng.standard_normal((3, 16))
        patches = rng.standard_normal((8, 16))
        a = bb.forward(prompts, patches)
        b = bb.forward(prompts, patches)
        assert np.array_equal(a.cls_per_layer, b.cls_per_layer)

    def test_prompt_sensitivity(self, bb):
        rng = np.random.default_rng(3)
        prompts = rng.standard_normal((3, 16))
        patches = rng.standard_normal((8, 16))
        base = bb.forward(prompts, patches)
        bumped = prompts.copy()
        bumped[1, 5] += 1.0
        assert not np.array_equal(base.final_cls,
                                  bb.forward(bumped, patches).final_cls)

    def test_prompt_width_mismatch(self, bb):
        patches = np.zeros((8, 16))
        with pytest.raises(DimensionMismatchError):
            bb.forward(np.zeros((2, 7)), patches)

    def test_patch_shape_mismatch(self, bb):
        with pytest.raises(DimensionMismatchError):
            bb.forward(np.zeros((2, 16)), np.zeros((5, 16)))


class TestBatchStats:
    def test_single_sample_zero_std(self, bb):
        batch = np.random.default_rng(4).standard_normal((1, 8, 16))
        _, stats = bb.batch_forward(np.zeros((3, 16)), batch)
        assert np.array_equal(stats.sigma, np.zeros((4, 16)))

    def test_duplicated_sample(self, bb):
        sample = np.random.default_rng(5).standard_normal((8, 16))
        trace = bb.forward(np.zeros((3, 16)), sample)
        _, stats = bb.batch_forward(np.zeros((3, 16)),
                                    np.stack([sample, sample]))
        assert np.allclose(stats.mu, trace.cls_per_layer, atol=1e-12)
        assert np.allclose(stats.sigma, 0.0, atol=1e-12)

    def test_stats_shapes(self, bb):
        batch = np.random.default_rng(6).standard_normal((64, 8, 16))
        final, stats = bb.batch_forward(np.zeros((3, 16)), batch)
        assert final.shape == (64, 16)
        assert stats.mu.shape == (4, 16)
        assert stats.sigma.shape == (4, 16)

    def test_population_std(self, bb):
        batch = np.random.default_rng(7).standard_normal((5, 8, 16))
        cls_rows = np.stack([bb.forward(np.zeros((0, 16)), p).cls_per_layer
                             for p in batch], axis=1)
        _, stats = bb.batch_forward(np.zeros((0, 16)), batch)
        assert np.allclose(stats.sigma, cls_rows.std(axis=1), atol=1e-10)

    def test_empty_batch(self, bb):
        with pytest.raises(EmptyBatchError):
            bb.batch_forward(np.zeros((3, 16)), np.zeros((0, 8, 16)))
