import numpy as np
import pytest

from steerlab import autodiff as ad
from steerlab.autodiff import Tensor
from steerlab.backbone import Backbone, BackboneConfig

from oracles import finite_difference_gradients, gradcheck


def small_backbone(seed=0, with_fusion=False):
    return Backbone(obs_dim=5, config=BackboneConfig(hidden=(6, 4), fusion_width=5,
                                                     seed=seed), with_fusion=with_fusion)


def test_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(hidden=())
    with pytest.raises(ValueError):
        BackboneConfig(hidden=(4, 0))
    with pytest.raises(ValueError):
        BackboneConfig(activation="sigmoid")


def test_zero_observation_zero_weights_gives_zero_features():
    bb = small_backbone()
    for p in bb.params.values():
        p.values[...] = 0.0
    feats = bb.encode(np.zeros(5))
    np.testing.assert_array_equal(feats.values, np.zeros((1, 4)))


def test_encode_deterministic_across_runs():
    obs = np.linspace(-1, 1, 5)
    a = small_backbone(seed=42).encode(obs).values
    b = small_backbone(seed=42).encode(obs).values
    np.testing.assert_array_equal(a, b)


def test_encode_rejects_non_finite():
    bb = small_backbone()
    with pytest.raises(ValueError, match="non-finite"):
        bb.encode(np.array([0.0, np.nan, 0.0, 0.0, 0.0]))


def test_encode_rejects_wrong_dim():
    with pytest.raises(ValueError, match="shape"):
        small_backbone().encode(np.zeros(4))


def test_encode_input_jacobian_matches_finite_differences():
    bb = small_backbone(seed=3)
    x = Tensor(np.random.default_rng(1).normal(size=(1, 5)))

    def loss_builder():
        return ad.tsum(ad.square(bb.encode(x)))

    assert gradcheck(loss_builder, {"x": x}) < 1e-4


def test_fuse_duplicate_candidates_equal():
    bb = small_backbone(seed=5, with_fusion=True)
    feats = bb.encode(np.ones(5) * 0.3)
    out = bb.fuse(feats, np.array([[0.25, 0.25]]))
    assert abs(out.values[0, 0] - out.values[0, 1]) < 1e-12


def test_encoder_called_once_regardless_of_candidate_count():
    bb = small_backbone(seed=5, with_fusion=True)
    obs = np.ones(5) * 0.1
    for m in (1, 32, 512):
        before = bb.encode_calls
        feats = bb.encode(obs)
        out = bb.fuse(feats, np.linspace(-1, 1, m).reshape(1, -1))
        assert out.shape == (1, m)
        assert bb.encode_calls == before + 1


def test_fuse_rejects_empty_candidates():
    bb = small_backbone(with_fusion=True)
    feats = bb.encode(np.zeros(5))
    with pytest.raises(ValueError, match="empty"):
        bb.fuse(feats, np.zeros((1, 0)))


def test_fuse_requires_fusion_head():
    bb = small_backbone(with_fusion=False)
    feats = bb.encode(np.zeros(5))
    with pytest.raises(ValueError, match="fusion"):
        bb.fuse(feats, np.array([[0.0]]))


def test_encode_fuse_gradient_check():
    bb = small_backbone(seed=9, with_fusion=True)
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(3, 5))
    cand = rng.uniform(-1, 1, size=(3, 4))

    def loss_builder():
        return ad.tmean(ad.square(bb.fuse(bb.encode(obs), cand)))

    assert gradcheck(loss_builder, bb.params) < 1e-4


def test_fusion_batch_mismatch_rejected():
    bb = small_backbone(with_fusion=True)
    feats = bb.encode(np.zeros((2, 5)))
    with pytest.raises(ValueError, match="batch"):
        bb.fuse(feats, np.zeros((3, 4)))
