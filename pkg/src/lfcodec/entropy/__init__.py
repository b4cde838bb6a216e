"""Latent probability models and range coding."""

from lfcodec.entropy.context import SpaceChannelContext, anchor_mask, scctx_predict
from lfcodec.entropy.models import (
    SCALE_BOUND,
    SCALE_TABLE,
    FactorizedPrior,
    estimate_bits,
    gaussian_bin_likelihood,
    gaussian_likelihood,
    gaussian_tables,
)
from lfcodec.entropy.rangecoder import (
    RangeDecoder,
    RangeEncoder,
    ideal_bits,
    pmf_to_cdf,
    range_decode,
    range_encode,
)

__all__ = [
    "SCALE_BOUND", "SCALE_TABLE", "FactorizedPrior", "RangeDecoder", "RangeEncoder",
    "SpaceChannelContext", "anchor_mask", "estimate_bits", "gaussian_bin_likelihood",
    "gaussian_likelihood", "gaussian_tables", "ideal_bits", "pmf_to_cdf", "range_decode",
    "range_encode", "scctx_predict",
]
