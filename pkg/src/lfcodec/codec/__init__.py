"""Compression network, bitstream container and encode/decode entry points."""

from lfcodec.codec.api import DecodeResult, EncodeResult, decode_lf, encode_lf, reconstruct
from lfcodec.codec.model import ABLATIONS, LAMBDA_LADDER, CodecConfig, LFCodecModel, quantize

__all__ = [
    "ABLATIONS", "LAMBDA_LADDER", "CodecConfig", "DecodeResult", "EncodeResult", "LFCodecModel",
    "decode_lf", "encode_lf", "quantize", "reconstruct",
]
