import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfcodec.codec import bitstream
from lfcodec.codec.api import decode_lf, encode_lf, reconstruct
from lfcodec.codec.model import ABLATIONS, CodecConfig, LFCodecModel, flags_from_bits, quantize
from lfcodec.errors import ConfigError, DecodeError, IntegrityError, ShapeError
from lfcodec.lf import LightField4D
from lfcodec.metrics import bpp
from lfcodec.nd import checkpoint
from lfcodec.nd import tensor as T
from lfcodec.train import synth_dataset


def model_and_hash(cfg):
    model = LFCodecModel(cfg)
    return model, checkpoint.model_hash(checkpoint.dumps(model.state_dict(), {"config": cfg.to_dict()}))


@pytest.fixture(scope="module")
def lf():
    return synth_dataset(1, 2, 32, 32, seed=7)[0]


# shapes ------------------------------------------------------------------------------

def test_analysis_and_synthesis_shapes():
    model = LFCodecModel(CodecConfig(A=2, channels=1))
    with T.no_grad():
        y = model.analysis(np.zeros((1, 1, 64, 64)))
        assert y.shape == (1, 64, 4, 4)
        assert model.synthesis(y).shape == (1, 1, 64, 64)


def test_hyper_shapes():
    model = LFCodecModel(CodecConfig.toy(M=64, hyper=16))
    with T.no_grad():
        z = model.hyper_analysis(np.zeros((1, 64, 16, 16)))
        assert z.shape == (1, 16, 4, 4)
        assert model.hyper_synthesis(z).shape == (1, 64, 16, 16)


def test_zero_weights_zero_latents():
    model = LFCodecModel(CodecConfig.tiny())
    for p in model.parameters():
        p.data = np.zeros_like(p.data)
    with T.no_grad():
        y = model.analysis(np.zeros((1, 1, 64, 64)))
        assert not np.any(y.data)
        assert not np.any(model.hyper_analysis(y).data)


def test_input_checks():
    model = LFCodecModel(CodecConfig.tiny())
    with pytest.raises(ShapeError):
        model.analysis(np.zeros((1, 1, 48, 64)))
    with pytest.raises(ShapeError):
        model.synthesis(np.zeros((1, 3, 4, 4)))


def test_config_validation():
    with pytest.raises(ConfigError):
        CodecConfig(A=1)
    with pytest.raises(ConfigError):
        CodecConfig(lambda_index=5)
    with pytest.raises(ConfigError):
        CodecConfig.tiny().with_ablations(["no_such_flag"])
    assert CodecConfig(lmbda=0.01).lam == 0.01


def test_flags_independent():
    for i, name in enumerate(ABLATIONS):
        cfg = CodecConfig.tiny().with_ablations([name])
        assert cfg.flag_bits == 1 << i and flags_from_bits(cfg.flag_bits) == [name]
    both = CodecConfig.tiny().with_ablations(["no_fdm", "no_strip_conv"])
    assert sorted(flags_from_bits(both.flag_bits)) == ["no_fdm", "no_strip_conv"]


# quantisation ---------------------------------------------------------------------------

def test_quantize_examples():
    assert quantize(np.array(0.6)).item() == 1.0
    assert quantize(np.array(-0.5)).item() == -1.0
    assert quantize(np.array(0.5)).item() == 1.0
    assert quantize(np.array(1.2), step=0.5).item() == 1.0
    with pytest.raises(ConfigError):
        quantize(np.array(1.0), step=0.0)


def test_quantize_noise_range():
    y = np.random.default_rng(0).normal(size=100_000)
    out = quantize(y, 2.0, "noise", np.random.default_rng(1)).data
    assert np.all(out >= y - 1.0) and np.all(out < y + 1.0)


# encode / decode ------------------------------------------------------------------------------

def test_round_trip_and_determinism(lf, toy_checkpoint):
    _, model, h = toy_checkpoint
    a, b = encode_lf(lf, model, h), encode_lf(lf, model, h)
    assert a.data == b.data
    dec = decode_lf(a.data, model, h)
    assert np.array_equal(dec.y_q, a.y_q) and np.array_equal(dec.z_q, a.z_q)
    assert dec.lf.samples.shape == lf.samples.shape
    again = decode_lf(a.data, model, h)
    assert dec.lf.samples.tobytes() == again.lf.samples.tobytes()
    assert dec.lf == reconstruct(model, a.y_q, dec.header)


def test_rate_estimate_close_to_coded(lf, toy_checkpoint):
    _, model, h = toy_checkpoint
    res = encode_lf(lf, model, h)
    for s in res.streams:
        assert abs(s.estimated_bits - s.bits) <= 0.03 * s.estimated_bits + 64, s
    assert abs(res.estimated_bits - res.payload_bits) <= 0.03 * res.estimated_bits + 64
    assert res.bpp == bpp(res.data) == 8 * len(res.data) / (4 * 32 * 32)


def test_report_stable_apart_from_timings(lf, toy_checkpoint):
    _, model, h = toy_checkpoint
    a, b = encode_lf(lf, model, h).report(), encode_lf(lf, model, h).report()
    a.pop("timings"), b.pop("timings")
    assert a == b


def test_tampering_detected(lf, toy_checkpoint):
    _, model, h = toy_checkpoint
    data = encode_lf(lf, model, h).data
    for pos in range(bitstream.HEADER_SIZE + 5, len(data)):
        bad = bytearray(data)
        bad[pos] ^= 0x10
        try:
            dec = decode_lf(bytes(bad), model, h)
        except DecodeError:
            continue
        raise AssertionError(f"tampered byte {pos} decoded to {dec.y_q.shape}")


def test_header_tampering(lf, toy_checkpoint):
    _, model, h = toy_checkpoint
    data = bytearray(encode_lf(lf, model, h).data)
    data[10] ^= 1
    with pytest.raises(IntegrityError):
        decode_lf(bytes(data), model, h)
    with pytest.raises(DecodeError):
        decode_lf(b"XXXX" + bytes(data[4:]), model, h)


def test_truncation_and_trailing(lf, toy_checkpoint):
    _, model, h = toy_checkpoint
    data = encode_lf(lf, model, h).data
    for cut in (3, bitstream.HEADER_SIZE - 1, bitstream.HEADER_SIZE + 2, len(data) - 1):
        with pytest.raises(DecodeError):
            decode_lf(data[:cut], model, h)
    with pytest.raises(DecodeError):
        decode_lf(data + b"\0", model, h)


def test_hash_and_config_mismatch(lf, toy_checkpoint):
    _, model, h = toy_checkpoint
    data = encode_lf(lf, model, h).data
    with pytest.raises(IntegrityError):
        decode_lf(data, model, h ^ 1)
    other = LFCodecModel(CodecConfig.toy().with_ablations(["no_fdm"]))
    with pytest.raises(ConfigError):
        decode_lf(data, other, h)


def test_wrong_light_field_rejected(toy_checkpoint):
    _, model, h = toy_checkpoint
    with pytest.raises(ConfigError):
        encode_lf(LightField4D(np.zeros((1, 3, 3, 8, 8))), model, h)
    with pytest.raises(ConfigError):
        encode_lf(LightField4D(np.zeros((3, 2, 2, 8, 8))), model, h)


@pytest.mark.parametrize("flags", [[name] for name in ABLATIONS] + [["no_fdm", "no_strip_conv"]])
def test_ablations_round_trip(flags, lf):
    model, h = model_and_hash(CodecConfig.tiny().with_ablations(flags))
    res = encode_lf(lf, model, h)
    dec = decode_lf(res.data, model, h)
    assert np.array_equal(dec.y_q, res.y_q) and np.array_equal(dec.z_q, res.z_q)
    assert sorted(flags_from_bits(dec.header.ablation_bits)) == sorted(flags)
    assert encode_lf(lf, model, h).data == res.data


@pytest.mark.parametrize("A,size", [(3, 20), (4, 16), (5, 12)])
def test_shape_chain_other_angular_sizes(A, size):
    model, h = model_and_hash(CodecConfig.tiny(A=A))
    lf = LightField4D(np.random.default_rng(A).random((1, A, A, size, size + 3)))
    res = encode_lf(lf, model, h)
    dec = decode_lf(res.data, model, h)
    assert dec.lf.samples.shape == lf.samples.shape
    assert np.array_equal(dec.y_q, res.y_q)


def test_value_range_restored(toy_checkpoint):
    _, model, h = toy_checkpoint
    lf = LightField4D(synth_dataset(1, 2, 32, 32, seed=3)[0].samples * 255, value_range=(0, 255))
    dec = decode_lf(encode_lf(lf, model, h).data, model, h)
    assert dec.lf.value_range == (0.0, 255.0) and dec.lf.in_range()


# container ------------------------------------------------------------------------------

@given(st.integers(0, 2**63 - 1))
def test_varint_round_trip(n):
    enc = bitstream.encode_varint(n)
    assert bitstream.decode_varint(enc + b"\x07", 0) == (n, len(enc))


def test_varint_truncated():
    with pytest.raises(DecodeError):
        bitstream.decode_varint(b"\x80\x80", 0)


@given(st.lists(st.binary(max_size=300), max_size=6), st.integers(0, 255), st.integers(0, 2**64 - 1))
def test_container_round_trip(streams, flags, model_hash):
    hdr = bitstream.Header(flags, 5, 33, 47, 3, -1, 1, 3, 1.0, 0.0, 255.0, model_hash, len(streams))
    back, got = bitstream.unpack(bitstream.pack(hdr, streams))
    assert back == hdr and got == streams


def test_layout_flag():
    hdr = bitstream.Header(bitstream.LAYOUT_MACPI | 0b101, 2, 8, 8, 1, 0, 0, 0, 1.0, 0.0, 1.0, 0, 0)
    assert hdr.layout == "macpi" and hdr.ablation_bits == 0b101
