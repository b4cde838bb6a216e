import numpy as np
import pytest

from lfcodec.disentangle import input_support
from lfcodec.errors import ShapeError
from lfcodec.nd import tensor as T
from lfcodec.scm import SCM, ASCLayer, asc_layer


def zero_weights(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


def impulse_support(module, c, n=21):
    """Input positions of channel-summed gradient support for the centre output site."""
    sup = input_support(module, 1, n, n, (0, n // 2, n // 2), channels=c)
    return {(h - n // 2, w - n // 2) for _, _, h, w in sup}


def cross(side=3):
    r, s = side * side // 2, side // 2
    return {(i, 0) for i in range(-r, r + 1)} | {(0, j) for j in range(-r, r + 1)} | \
        {(i, j) for i in range(-s, s + 1) for j in range(-s, s + 1)}


def test_kernel_shapes():
    layer = ASCLayer(4)
    assert [b.weight.shape[2:] for b in layer.branches] == [(9, 1), (1, 9), (3, 3)]
    assert layer.fuse.weight.shape == (4, 4, 1, 1)
    assert [b.weight.shape[2:] for b in ASCLayer(4, use_strip=False).branches] == [(3, 3)]


def test_zero_branches_identity():
    layer = ASCLayer(3)
    for b in layer.branches:
        zero_weights(b)
    x = np.random.default_rng(0).normal(size=(1, 3, 6, 6))
    np.testing.assert_array_equal(asc_layer(layer, x).data, x)


def test_identity_centre_doubles():
    layer = ASCLayer(2)
    for b in layer.branches:
        zero_weights(b)
    eye = np.zeros((2, 2, 3, 3))
    eye[0, 0, 1, 1] = eye[1, 1, 1, 1] = 1.0
    layer.branches[2].weight.data = eye
    layer.fuse.weight.data = np.eye(2).reshape(2, 2, 1, 1)
    x = np.random.default_rng(1).normal(size=(1, 2, 7, 7))
    np.testing.assert_allclose(layer(x).data, 2 * x, atol=1e-15)


def test_impulse_support_is_cross():
    layer = ASCLayer(2, rng=np.random.default_rng(2))
    assert impulse_support(layer, 2) - {(0, 0)} == cross() - {(0, 0)}


def test_no_strip_support_is_square():
    layer = ASCLayer(2, use_strip=False, rng=np.random.default_rng(3))
    assert impulse_support(layer, 2) == {(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)}


def test_scm_support_union_of_crosses():
    """Two stacked ASC layers reach the Minkowski sum of two crosses."""
    block = SCM(2, 2, "none", rng=np.random.default_rng(4))
    twice = {(a + c, b + d) for a, b in cross() for c, d in cross()}
    assert impulse_support(block, 2, n=41) == twice


def test_scm_zero_input_gives_zero():
    block = SCM(3, 3, "none")
    assert not np.any(block(np.zeros((1, 3, 8, 8))).data)


@pytest.mark.parametrize("mode,shape", [("down2", (1, 6, 8, 8)), ("up2", (1, 6, 32, 32)), ("none", (1, 6, 16, 16))])
def test_scm_shapes(mode, shape):
    assert SCM(4, 6, mode)(np.zeros((1, 4, 16, 16))).shape == shape


def test_down2_large_shape():
    assert SCM(48, 16, "down2")(np.zeros((1, 48, 32, 32))).shape == (1, 16, 16, 16)


def test_down2_odd_extent():
    with pytest.raises(ShapeError):
        SCM(2, 2, "down2")(np.zeros((1, 2, 7, 8)))


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        ASCLayer(3)(np.zeros((1, 2, 4, 4)))


def test_scm_gradient_on_small_block():
    from lfcodec.selftest import OP_TOL, check_module

    rng = np.random.default_rng(5)
    block = SCM(2, 2, "none", rng=rng)
    assert check_module(block, block, rng.normal(size=(1, 2, 8, 8)), rng) <= OP_TOL


def test_gelu_between_layers():
    block = SCM(1, 1, "none")
    for layer in (block.f1, block.f2):
        for b in layer.branches:
            zero_weights(b)
    block.norm.beta_p.data[:] = np.sqrt(1.0 - 1e-6)
    block.norm.gamma_p.data[:] = 0.0
    x = np.random.default_rng(6).normal(size=(1, 1, 5, 5))
    np.testing.assert_allclose(block(x).data, T.gelu(x).data + x, atol=1e-12)
