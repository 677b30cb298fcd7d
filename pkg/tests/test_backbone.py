import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdfnet.backbone import (
    DESK_BACKBONE, PAPER_BACKBONE, Backbone, BackboneConfig, Fusion, FusionMethod, backbone_forward, fuse,
)
from mdfnet.tensor import Tensor, backward, ops

METHODS = list(FusionMethod)


def test_paper_backbone_output_dims():
    bb = Backbone(np.random.default_rng(0), PAPER_BACKBONE)
    out = backbone_forward(Tensor(np.random.default_rng(1).uniform(size=(1, 1, 512, 512))), bb)
    assert PAPER_BACKBONE.downsample == 32
    assert out.shape == (1, 64, 16, 16)


def test_desk_backbone_output_dims():
    bb = Backbone(np.random.default_rng(0), DESK_BACKBONE)
    assert bb(Tensor(np.zeros((1, 1, 64, 64)))).shape == (1, 64, 8, 8)


def test_zero_input_zero_bias_gives_zero():
    bb = Backbone(np.random.default_rng(0), DESK_BACKBONE)
    assert not bb(Tensor(np.zeros((2, 1, 64, 64)))).data.any()


def test_indivisible_stride_schedule():
    with pytest.raises(ValueError):
        DESK_BACKBONE.output_hw(60)
    with pytest.raises(ValueError):
        BackboneConfig(channels=(4, 8), strides=(2,))


def test_config_roundtrip():
    assert BackboneConfig.from_dict(PAPER_BACKBONE.to_dict()) == PAPER_BACKBONE


def test_sum_combine_is_symmetric():
    rng = np.random.default_rng(2)
    f = Fusion(rng, 4, "sum")
    a, b = Tensor(rng.normal(size=(1, 4, 5, 5))), Tensor(rng.normal(size=(1, 4, 5, 5)))
    np.testing.assert_array_equal(f.combine(a, b).data, f.combine(b, a).data)


def test_hadamard_with_ones_is_identity():
    rng = np.random.default_rng(3)
    f = Fusion(rng, 4, "hadamard")
    img = Tensor(rng.normal(size=(2, 4, 3, 3)))
    np.testing.assert_array_equal(f.combine(Tensor(np.ones((2, 4, 3, 3))), img).data, img.data)


def test_concat_conv_channel_arithmetic():
    rng = np.random.default_rng(4)
    f = Fusion(rng, 64, "concat-conv")
    assert f.project.weight.shape == (64, 128, 3, 3)
    a = Tensor(rng.normal(size=(1, 64, 16, 16)))
    assert ops.concat([a, a], axis=1).shape == (1, 128, 16, 16)
    assert fuse(a, a, f).shape == (1, 64, 16, 16)
    assert Fusion(rng, 64, "concat-linear").project.weight.shape == (64, 128, 1, 1)


def test_unknown_fusion_and_shape_mismatch():
    with pytest.raises(ValueError):
        FusionMethod.parse("max")
    f = Fusion(np.random.default_rng(0), 2, "sum")
    with pytest.raises(ValueError):
        f(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 5, 5))))


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(METHODS), st.integers(1, 2), st.integers(1, 6), st.integers(2, 6))
def test_every_method_preserves_shape(method, B, D, H):
    rng = np.random.default_rng(D * 7 + H)
    f = Fusion(rng, D, method)
    img = Tensor(rng.normal(size=(B, D, H, H)))
    assert f(Tensor(rng.normal(size=(B, D, H, H))), img).shape == img.shape


@pytest.mark.parametrize("method", METHODS)
def test_gradient_reaches_both_branches(method):
    rng = np.random.default_rng(5)
    f = Fusion(rng, 3, method)
    c = Tensor(rng.normal(size=(1, 3, 4, 4)) + 0.5, requires_grad=True)
    i = Tensor(rng.normal(size=(1, 3, 4, 4)) + 0.5, requires_grad=True)
    g = backward(ops.sum(f(c, i)), [c, i])
    assert np.abs(g[c]).sum() > 0 and np.abs(g[i]).sum() > 0
