"""Oracle suites shared by ``lfcodec selftest`` and the test-suite.

Each gradient case is a function ``case(seed) -> relative error``; the op
cases must stay below ``OP_TOL`` and the composed codec below ``E2E_TOL``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from lfcodec.nd import tensor as T
from lfcodec.nd.conv import conv2d, conv_sum_same, deconv2d
from lfcodec.nd.gradcheck import check_gradients, numeric_grad, rel_error
from lfcodec.nd.layers import channel_attention, gdn

OP_TOL = 1e-4
E2E_TOL = 1e-3


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 2.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _op_cases():
    def elementwise(name, fn, positive=False, kink=False):
        def case(seed):
            rng = np.random.default_rng(seed)
            if positive:
                x = rng.uniform(0.3, 2.0, (3, 4))
            elif kink:
                x = _away_from_zero(rng, (3, 4))
            else:
                x = rng.normal(size=(3, 4))
            return check_gradients(fn, [x], rng)
        return name, case

    def binary(name, fn):
        def case(seed):
            rng = np.random.default_rng(seed)
            a, b = rng.normal(size=(3, 4)), rng.uniform(0.5, 2.0, (1, 4))
            return check_gradients(fn, [a, b], rng)
        return name, case

    cases = [
        binary("add", T.add), binary("sub", T.sub), binary("mul", T.mul), binary("div", T.div),
        elementwise("square", T.square), elementwise("sqrt", T.sqrt, positive=True),
        elementwise("exp", T.exp), elementwise("log", T.log, positive=True),
        elementwise("absolute", T.absolute, kink=True), elementwise("relu", T.relu, kink=True),
        elementwise("sigmoid", T.sigmoid), elementwise("softplus", T.softplus),
        elementwise("tanh", T.tanh), elementwise("normal_cdf", T.normal_cdf), elementwise("gelu", T.gelu),
        elementwise("clamp_min", lambda x: T.clamp_min(x, 0.05), kink=True),
        elementwise("mean", lambda x: T.mean(x, axis=1, keepdims=True)),
        elementwise("tsum", lambda x: T.tsum(x, axis=0)),
        elementwise("reshape_transpose", lambda x: T.transpose(T.reshape(x, (2, 6)), (1, 0))),
    ]

    def tensor_case(name, shapes, fn, **kw):
        def case(seed):
            rng = np.random.default_rng(seed)
            return check_gradients(fn, [rng.normal(size=s) for s in shapes], rng, **kw)
        return name, case

    cases += [
        tensor_case("concat_slice", [(2, 3, 4, 4), (2, 2, 4, 4)],
                    lambda a, b: T.channel_slice(T.concat([a, b], axis=1), 1, 4)),
        tensor_case("matmul", [(2, 3, 4), (2, 4, 5)], T.matmul),
        tensor_case("upsample_nearest", [(1, 2, 3, 4)], lambda a: T.upsample_nearest(a, (2, 3))),
        tensor_case("pad2d_replicate", [(1, 2, 4, 5)], lambda a: T.pad2d(a, ((2, 1), (0, 3)), "replicate")),
        tensor_case("conv2d", [(2, 3, 7, 8), (4, 3, 3, 3), (4,)], lambda x, w, b: conv2d(x, w, b, 1, 1, 1)),
        tensor_case("conv2d_strided", [(1, 2, 9, 8), (3, 2, 3, 3)], lambda x, w: conv2d(x, w, None, 2, 1, 1)),
        tensor_case("conv2d_dilated", [(1, 2, 9, 9), (3, 2, 3, 2)],
                    lambda x, w: conv2d(x, w, None, 1, (2, 3), ((2, 1), (0, 3)))),
        tensor_case("conv2d_replicate", [(1, 2, 6, 6), (2, 2, 3, 3)],
                    lambda x, w: conv2d(x, w, None, 1, 1, 1, "replicate")),
        tensor_case("deconv2d", [(2, 3, 4, 5), (3, 2, 4, 4), (2,)], lambda x, w, b: deconv2d(x, w, b, 2, 1)),
        tensor_case("conv_sum_same", [(1, 3, 6, 7), (2, 3, 9, 1), (2, 3, 1, 9), (2, 3, 3, 3)],
                    lambda x, a, b, c: conv_sum_same(x, [a, b, c])),
    ]

    def gdn_case(inverse):
        def case(seed):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 3, 4, 4))
            beta = rng.uniform(0.5, 1.5, 3)
            gamma = rng.uniform(0.01, 0.2, (3, 3))
            return check_gradients(lambda a, b, g: gdn(a, b, g, inverse), [x, beta, gamma], rng)
        return ("igdn" if inverse else "gdn"), case

    def attention_case(seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 8, 4, 4))
        w1, w2 = rng.normal(size=(2, 8, 1, 1)), rng.normal(size=(8, 2, 1, 1))
        return check_gradients(channel_attention, [x, w1, w2], rng)

    def likelihood_case(seed):
        from lfcodec.entropy.models import estimate_bits, gaussian_likelihood

        rng = np.random.default_rng(seed)
        y = rng.normal(size=(1, 2, 3, 3)) * 2
        mu = y + rng.uniform(0.2, 0.4, y.shape) * rng.choice([-1, 1], y.shape)
        sigma = rng.uniform(0.3, 2.0, y.shape)
        return check_gradients(lambda a, m, s: estimate_bits(gaussian_likelihood(a, m, s)), [y, mu, sigma], rng)

    cases += [gdn_case(False), gdn_case(True), ("channel_attention", attention_case),
              ("gaussian_bits", likelihood_case)]
    return cases


def check_module(fn, module, x, rng, eps=1e-5, n_params=16, n_inputs=8):
    """Relative error for ``sum(fn(x) * G)`` w.r.t. sampled input entries and sampled parameters."""
    x = np.asarray(x, dtype=np.float64)
    leaf = T.Tensor(x, requires_grad=True)
    out = fn(leaf)
    weights = rng.normal(size=out.shape)
    module.zero_grad()
    T.tsum(out * weights).backward()

    def scalar():
        with T.no_grad():
            return float(np.sum(fn(T.Tensor(x)).data * weights))

    params = module.parameters()
    analytic, numeric = [], []
    idx = rng.choice(x.size, min(n_inputs, x.size), replace=False)
    analytic.append(leaf.grad.reshape(-1)[idx])
    numeric.append(numeric_grad(scalar, x, eps, idx))
    sizes = np.array([p.data.size for p in params], dtype=np.float64)
    picks = rng.choice(len(params), n_params, p=sizes / sizes.sum())
    for k in picks:
        p = params[k]
        i = int(rng.integers(p.data.size))
        g = 0.0 if p.grad is None else p.grad.reshape(-1)[i]
        analytic.append(np.array([g]))
        numeric.append(numeric_grad(scalar, p.data, eps, [i]))
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))


def _module_cases():
    from lfcodec.disentangle import KINDS, FDM, Extractor, ExtractorSpec
    from lfcodec.scm import SCM, ASCLayer

    def asc(seed):
        rng = np.random.default_rng(seed)
        layer = ASCLayer(3, rng=rng)
        return check_module(layer, layer, rng.normal(size=(1, 3, 6, 6)), rng)

    def scm(mode, inverse):
        def case(seed):
            rng = np.random.default_rng(seed)
            block = SCM(2, 3, mode, inverse=inverse, rng=rng)
            return check_module(block, block, rng.normal(size=(1, 2, 4, 4)), rng)
        return f"scm_{mode}{'_igdn' if inverse else ''}", case

    def extractor(kind):
        def case(seed):
            rng = np.random.default_rng(seed)
            ext = Extractor(ExtractorSpec(kind, 3, 1, 2), rng)
            return check_module(ext, ext, rng.normal(size=(1, 1, 6, 9)), rng)
        return f"extractor_{kind}", case

    def fdm(seed):
        rng = np.random.default_rng(seed)
        mod = FDM(2, 1, 4, 2, rng=rng)
        return check_module(mod, mod, rng.normal(size=(1, 1, 4, 6)), rng)

    return [("asc", asc), scm("down2", False), scm("up2", True), scm("none", False)] + \
        [extractor(k) for k in KINDS] + [("fdm", fdm)]


def codec_loss_case(seed, ablations=(), n_params=12):
    """End-to-end J = D + lambda R on the tiny configuration with zero quantisation noise."""
    from lfcodec.codec.model import CodecConfig, LFCodecModel
    from lfcodec.train import rate_bits, rd_loss

    rng = np.random.default_rng(seed)
    cfg = CodecConfig.tiny(seed=seed, lambda_index=4).with_ablations(list(ablations))
    model = LFCodecModel(cfg)
    x = rng.random((1, 1, 64, 64))
    target = x.copy()

    def loss(inp):
        out = model.forward(inp, zero_noise=True)
        return rd_loss(target, out["x_hat"], rate_bits(out), cfg.lam, 64 * 64).J

    return check_module(loss, model, x, rng, eps=1e-5, n_params=n_params, n_inputs=4)


def gradient_cases():
    """(name, case, tolerance) triples covering ops, layers and the composed codec."""
    out = [(n, c, OP_TOL) for n, c in _op_cases()]
    out += [(n, c, OP_TOL) for n, c in _module_cases()]
    out.append(("codec_end_to_end", codec_loss_case, E2E_TOL))
    return out


# other suites ---------------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    passed: bool
    seconds: float
    detail: str = ""


def suite_gradients(seeds=range(3)):
    failures, worst = [], 0.0
    for name, case, tol in gradient_cases():
        for seed in seeds:
            err = case(seed)
            worst = max(worst, err if tol == OP_TOL else 0.0)
            if not err <= tol:
                failures.append(f"{name}[seed {seed}] {err:.2e} > {tol:g}")
    return not failures, "; ".join(failures[:5]) or f"worst op error {worst:.1e}"


def suite_representation(n=20, seed=0):
    from lfcodec.lf import LightField4D, crop_lf, macpi_to_sai, pad_lf, sai_to_macpi

    rng = np.random.default_rng(seed)
    for _ in range(n):
        a, h, w, c = int(rng.integers(2, 6)), int(rng.choice([16, 32, 48])), int(rng.choice([16, 32, 48])), int(rng.choice([1, 3]))
        lf = LightField4D(rng.random((c, a, a, h, w)))
        if not (macpi_to_sai(sai_to_macpi(lf)) == lf and crop_lf(*pad_lf(lf, 64)) == lf):
            return False, f"round trip failed for A={a} {h}x{w}x{c}"
    return True, f"{n} light fields"


def suite_coder(n=100, seed=0):
    from lfcodec.entropy.rangecoder import pmf_to_cdf, range_decode, range_encode

    rng = np.random.default_rng(seed)
    for i in range(n):
        k = int(rng.integers(2, 40))
        cdfs = pmf_to_cdf(rng.dirichlet(np.full(k, 0.5), size=4))
        idx = rng.integers(0, 4, int(rng.integers(0, 400)))
        syms = [int(rng.choice(k, p=np.diff(cdfs[j]) / 65536)) for j in idx]
        if range_decode(range_encode(syms, cdfs, idx), cdfs, len(syms), idx) != syms:
            return False, f"stream {i} did not round-trip"
    return True, f"{n} streams"


def suite_codec(seed=0):
    from lfcodec.codec.api import decode_lf, encode_lf
    from lfcodec.codec.model import CodecConfig, LFCodecModel
    from lfcodec.nd import checkpoint
    from lfcodec.train import synth_dataset

    cfg = CodecConfig.tiny(seed=seed)
    model = LFCodecModel(cfg)
    h = checkpoint.model_hash(checkpoint.dumps(model.state_dict(), {"config": cfg.to_dict()}))
    lf = synth_dataset(1, 2, 32, 32, seed=seed)[0]
    a, b = encode_lf(lf, model, h), encode_lf(lf, model, h)
    dec = decode_lf(a.data, model, h)
    if a.data != b.data:
        return False, "encoding not deterministic"
    if not (np.array_equal(dec.y_q, a.y_q) and np.array_equal(dec.z_q, a.z_q)):
        return False, "latents differ after decoding"
    return True, f"{len(a.data)} bytes"


def suite_bd():
    from lfcodec.metrics import bd_psnr, bd_rate

    rates = np.array([0.1, 0.2, 0.4, 0.8, 1.6])
    quals = np.array([28.0, 31.0, 33.5, 35.5, 37.0])
    a = list(zip(rates, quals))
    ok = (bd_rate(a, a) == 0.0 and bd_psnr(a, a) == 0.0
          and abs(bd_rate(list(zip(2 * rates, quals)), a) - 100.0) <= 0.1
          and abs(bd_psnr(list(zip(rates, quals + 1.0)), a) - 1.0) <= 0.01)
    return ok, "identity, doubled rate, +1 dB"


SUITES = {
    "gradients": suite_gradients,
    "representation": suite_representation,
    "coder": suite_coder,
    "codec": suite_codec,
    "bd": suite_bd,
}


def run_selftest(names=None, log=print):
    results = []
    for name in names or SUITES:
        t0 = time.perf_counter()
        try:
            ok, detail = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = SuiteResult(name, bool(ok), time.perf_counter() - t0, detail)
        results.append(res)
        if log:
            log(f"{'PASS' if res.passed else 'FAIL'}  {name:<15s} {res.seconds:7.2f} s  {res.detail}")
    return results
