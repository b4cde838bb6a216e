import numpy as np
import pytest

from lfcodec.disentangle import (
    CONCAT_ORDER,
    FDM,
    HELD_COORDS,
    KINDS,
    Extractor,
    ExtractorSpec,
    PlainStem,
    align_features,
    input_support,
    subspace_pure,
)
from lfcodec.errors import ShapeError
from lfcodec.lf import LightField4D, sai_to_macpi
from lfcodec.nd import tensor as T
from lfcodec.nd.layers import Conv2d


@pytest.mark.parametrize("A", [2, 3, 4, 5])
@pytest.mark.parametrize("H,W", [(16, 16), (16, 32), (32, 16)])
def test_shape_table(A, H, W):
    x = np.zeros((1, 1, A * H, A * W))
    for kind in KINDS:
        spec = ExtractorSpec(kind, A, 1, 2)
        assert Extractor(spec)(x).shape[2:] == spec.output_extent(H, W), kind


def test_uw_efe_first_layer_extent():
    ext = Extractor(ExtractorSpec("UW_EFE", 5, 1, 8))
    assert ext.layers[0](np.zeros((1, 1, 160, 160))).shape == (1, 8, 160, 32)


def test_afe_extent_and_sfe_identity():
    assert Extractor(ExtractorSpec("AFE", 5))(np.zeros((1, 1, 160, 160))).shape[2:] == (32, 32)
    sfe = Extractor(ExtractorSpec("SFE", 3, 1, 1))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    sfe.layers[0].weight.data = w
    x = np.random.default_rng(0).random((1, 1, 12, 15))
    np.testing.assert_array_equal(sfe(x).data, x)


def test_indivisible_macpi_rejected():
    with pytest.raises(ShapeError):
        Extractor(ExtractorSpec("AFE", 3))(np.zeros((1, 1, 10, 9)))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("A", [2, 3, 4, 5])
def test_subspace_purity(kind, A):
    assert subspace_pure(Extractor(ExtractorSpec(kind, A, 1, 2)), 4, 5)


def test_purity_probe_detects_mixing():
    conv = Conv2d(1, 1, 3)
    support = input_support(conv, 2, 4, 4, (0, 3, 3))
    assert len({(u, v) for u, v, _, _ in support}) > 1
    assert len({(h, w) for _, _, h, w in support}) > 1


def test_afe_reads_its_own_macropixel():
    ext = Extractor(ExtractorSpec("AFE", 3))
    support = input_support(ext, 3, 4, 4, (0, 2, 1))
    assert {(h, w) for _, _, h, w in support} == {(2, 1)}
    assert len(support) == 9


def test_sfe_reads_one_view():
    ext = Extractor(ExtractorSpec("SFE", 3))
    support = input_support(ext, 3, 5, 5, (0, 3 * 2 + 1, 3 * 2 + 2))
    assert {(u, v) for u, v, _, _ in support} == {(1, 2)}


def uw_oracle(ext, lf):
    """Gather-then-weight over the (U, W) plane straight from L(c, u, v, h, w)."""
    (l1, l2), A = ext.layers, lf.A
    w1, b1, w2, b2 = l1.weight.data, l1.bias.data, l2.weight.data, l2.bias.data
    C, _, _, H, W = lf.samples.shape
    lo = (A - 1) // 2
    f1 = np.zeros((w1.shape[0], A * H, W))
    for o in range(w1.shape[0]):
        for u in range(A):
            for h in range(H):
                for w in range(W):
                    acc = b1[o]
                    for c in range(C):
                        for v in range(A):
                            acc += w1[o, c, 0, v] * lf.samples[c, u, v, h, w]
                    f1[o, h * A + u, w] = acc
    out = np.zeros((w2.shape[0], A * H, W))
    for p in range(w2.shape[0]):
        for r in range(A * H):
            for w in range(W):
                acc = b2[p]
                for o in range(w1.shape[0]):
                    for a in range(A):
                        rr = r + a - lo
                        if 0 <= rr < A * H:
                            acc += w2[p, o, a, 0] * f1[o, rr, w]
                out[p, r, w] = acc
    return out


@pytest.mark.parametrize("A", [2, 3])
def test_uw_efe_matches_gather_oracle(A):
    rng = np.random.default_rng(A)
    lf = LightField4D(rng.random((3, A, A, 4, 3)))
    ext = Extractor(ExtractorSpec("UW_EFE", A, 3, 2), rng)
    for layer in ext.layers:
        layer.bias.data = rng.normal(size=layer.bias.shape)
    got = ext(sai_to_macpi(lf).pixels[None]).data[0]
    np.testing.assert_allclose(got, uw_oracle(ext, lf), atol=1e-10)


def test_align_features_examples():
    A = 5
    feats = {"AFE": np.arange(32 * 32, dtype=float).reshape(1, 1, 32, 32),
             "EFE_A": np.random.default_rng(0).random((1, 1, 160, 32)),
             "SFE": np.full((1, 1, 160, 160), 3.0)}
    out = align_features(feats, A)
    afe = out["AFE"].data[0, 0]
    assert afe.shape == (160, 160) and np.all(afe[:5, :5] == 0) and afe[5, 0] == 32
    assert np.array_equal(out["EFE_A"].data[0, 0], np.repeat(feats["EFE_A"][0, 0], 5, axis=1))
    assert np.all(out["SFE"].data == 3.0)


def test_fdm_shapes_and_ablation():
    fdm = FDM(2, 1, 48, 8)
    x = np.random.default_rng(1).random((1, 1, 32, 32))
    assert fdm.concat(x).shape == (1, 48, 32, 32)
    assert fdm(x).shape == (1, 48, 32, 32)
    assert fdm.kinds == CONCAT_ORDER
    small = FDM(2, 1, 48, 8, use_uwvh=False)
    assert small.concat(x).shape == (1, 32, 32, 32)
    assert PlainStem(1, 48)(x).shape == (1, 48, 32, 32)


def test_fdm_zero_attention():
    rng = np.random.default_rng(2)
    fdm = FDM(2, 1, 8, 4, rng=rng)
    fdm.attention.w1.data[:] = 0.0
    fdm.attention.w2.data[:] = 0.0
    x = rng.random((1, 1, 8, 8))
    expected = fdm.fuse(T.Tensor(fdm.concat(x).data / 2)).data + fdm.residual(x).data
    np.testing.assert_allclose(fdm(x).data, expected, atol=1e-14)


def test_held_coords_cover_every_kind():
    assert set(HELD_COORDS) == set(KINDS)
