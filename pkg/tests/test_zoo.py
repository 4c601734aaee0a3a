"""Architecture catalog contents, shape composition, and seeded init."""

import numpy as np
import pytest

from cexforge.network import forward
from cexforge.zoo import (Activation, ArchError, AvgPool2d, Conv2d, Dense,
                          Flatten, ZOO_NAMES, build_arch, infer_shapes,
                          init_params)


def test_cnn_1conv_layer_list():
    a = build_arch("cnn_1conv", (1, 5, 5))
    assert a.layers == (Conv2d(10, 3, 3, 1, 0), Activation("relu"), Flatten(),
                        Dense(1000), Activation("relu"),
                        Dense(100), Activation("relu"),
                        Dense(20), Activation("relu"), Dense(2))


def test_mlp_4hidden_widths():
    a = build_arch("mlp_4hidden", (10,))
    widths = [l.width for l in a.layers if isinstance(l, Dense)]
    assert widths == [100, 1000, 1000, 1000, 20, 2]
    acts = [l.kind for l in a.layers if isinstance(l, Activation)]
    assert acts == ["relu"] * 5  # between layers, none after the last


def test_mlp_5hidden_widths():
    a = build_arch("mlp_5hidden", (10,))
    widths = [l.width for l in a.layers if isinstance(l, Dense)]
    assert widths == [100, 1000, 1000, 1000, 1000, 20, 2]


def test_avgpool_stride_is_configurable():
    a1 = build_arch("cnn_avgpool", (3, 5, 5), avgpool_stride=1)
    pools = [l for l in a1.layers if isinstance(l, AvgPool2d)]
    assert pools == [AvgPool2d(3, 3, 1)]
    # stride may deliberately differ from the kernel size
    a3 = build_arch("cnn_avgpool", (3, 9, 9), avgpool_stride=3)
    pools = [l for l in a3.layers if isinstance(l, AvgPool2d)]
    assert pools == [AvgPool2d(3, 3, 3)]


def test_tanh_sigmoid_variants_share_the_conv_body():
    for name, act in (("cnn_tanh", "tanh"), ("cnn_sigmoid", "sigmoid")):
        a = build_arch(name, (1, 5, 5))
        assert [l for l in a.layers if isinstance(l, Conv2d)] == [Conv2d(10, 3, 3, 1, 0)]
        assert all(l.kind == act for l in a.layers if isinstance(l, Activation))


def test_unknown_name_lists_valid_names():
    with pytest.raises(ValueError, match="cnn_1conv"):
        build_arch("resnet50", (1, 5, 5))


@pytest.mark.parametrize("name", ZOO_NAMES)
@pytest.mark.parametrize("shape", [(1, 5, 5), (3, 5, 5), (10,)])
def test_every_zoo_arch_composes_and_runs(name, shape):
    if name.startswith("mlp") != (len(shape) == 1):
        pytest.skip("input rank does not apply to this family")
    a = build_arch(name, shape)
    m = init_params(a, 0)
    x = np.random.default_rng(0).uniform(-1, 1, shape)
    z = forward(m, x)
    assert z.data.shape == (2,)  # K=2 for every zoo model


def test_three_conv_stack_needs_padding_on_5x5():
    # unpadded 3x3 convs shrink 5 -> 3 -> 1 -> impossible, hence the padding
    from cexforge.zoo import ArchSpec
    layers = (Conv2d(5, 3, 3), Conv2d(10, 3, 3), Conv2d(20, 3, 3), Flatten(),
              Dense(2))
    with pytest.raises(ArchError, match="does not fit"):
        ArchSpec("bad", (1, 5, 5), layers, num_classes=2)
    padded = build_arch("cnn_3conv", (1, 5, 5))
    assert all(c.padding == 1 for c in padded.layers if isinstance(c, Conv2d))


def test_init_deterministic_from_seed():
    a = build_arch("cnn_1conv", (1, 5, 5))
    m1, m2 = init_params(a, 42), init_params(a, 42)
    for (n1, p1), (n2, p2) in zip(m1.named_params(), m2.named_params()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)


def test_different_seeds_differ():
    a = build_arch("mlp_4hidden", (10,))
    m1, m2 = init_params(a, 1), init_params(a, 2)
    assert any(not np.array_equal(p1.data, p2.data)
               for (_, p1), (_, p2) in zip(m1.named_params(), m2.named_params()))


def test_kaiming_uniform_bound():
    from cexforge.zoo import ArchSpec
    a = ArchSpec("k", (250,), (Flatten(), Dense(1000)), num_classes=1000)
    m = init_params(a, 0)
    w = m.layers[1]["weight"].data
    bound = np.sqrt(6.0 / 250)
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.9 * bound  # actually fills the range
    assert np.array_equal(m.layers[1]["bias"].data, np.zeros(1000))
