"""Rate-distortion training at desk scale: loss, Adam, plateau schedule, synthetic data, loop."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from lfcodec.codec.model import LAMBDA_LADDER, CodecConfig, LFCodecModel
from lfcodec.entropy.models import estimate_bits
from lfcodec.errors import NumericError, ParameterError, ShapeError
from lfcodec.lf import LightField4D, pad_lf, sai_to_macpi
from lfcodec.nd import checkpoint
from lfcodec.nd import tensor as T

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
TRACE_FIELDS = ("step", "J", "D", "R_bpp", "lr")
DIVERGENCE_FACTOR = 1e3


class TrainingDiverged(NumericError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class RDLossTerms:
    J: T.Tensor
    D: T.Tensor
    R: T.Tensor
    lam: float

    def values(self):
        return float(self.J.data), float(self.D.data), float(self.R.data)


def rd_loss(x, x_hat, rate_bits, lam, num_samples) -> RDLossTerms:
    """J = MSE(x, x_hat) + lam * rate_bits / num_samples."""
    if lam < 0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    if num_samples <= 0:
        raise ParameterError("num_samples must be positive")
    x, x_hat = T.as_tensor(x), T.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction shape {x_hat.shape} != input shape {x.shape}")
    d = T.mean(T.square(x_hat - x))
    r = T.as_tensor(rate_bits) * (1.0 / num_samples)
    return RDLossTerms(d + r * float(lam), d, r, float(lam))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def like(cls, params):
        return cls([np.zeros_like(np.asarray(p)) for p in params], [np.zeros_like(np.asarray(p)) for p in params])


def adam_step(params, grads, state: AdamState, lr, betas=ADAM_BETAS, eps=ADAM_EPS):
    """One bias-corrected Adam update. Returns the new parameter arrays; ``state`` is updated in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {i} at step {state.t + 1}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p = np.asarray(p, dtype=np.float64)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        grads = [None if g is None else g * scale for g in grads]
    return grads, total


@dataclass
class PlateauSchedule:
    """Reduce-on-plateau for a metric that should decrease (relative threshold mode)."""

    lr: float = 1e-4
    factor: float = 0.5
    patience: int = 20
    min_lr: float = 1e-6
    threshold: float = 1e-4
    best: float = math.inf
    num_bad: int = 0


def lr_plateau(schedule: PlateauSchedule, metric) -> float:
    metric = float(metric)
    if metric < schedule.best * (1.0 - schedule.threshold):
        schedule.best = metric
        schedule.num_bad = 0
    else:
        schedule.num_bad += 1
    if schedule.num_bad >= schedule.patience:
        schedule.lr = max(schedule.lr * schedule.factor, schedule.min_lr)
        schedule.num_bad = 0
    return schedule.lr


# synthetic light fields -------------------------------------------------------

def _texture(rng, h, w):
    noise = ndimage.gaussian_filter(rng.random((h, w)), sigma=1.5, mode="wrap")
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(3):
        fy, fx = rng.uniform(-0.35, 0.35, 2)
        noise = noise + 0.05 * np.sin(2 * np.pi * (fy * yy + fx * xx) / 2 + rng.uniform(0, 2 * np.pi))
    lo, hi = noise.min(), noise.max()
    return (noise - lo) / (hi - lo) if hi > lo else np.zeros_like(noise)


def synth_lf(A, H, W, disparity, rng, channels=1) -> LightField4D:
    """Textured fronto-parallel plane: SAI (u, v) is the base texture shifted by (d*u, d*v)."""
    margin = int(math.ceil(abs(disparity) * (A - 1))) + 1
    base = np.stack([_texture(rng, H + 2 * margin, W + 2 * margin) for _ in range(channels)])
    hh, ww = np.mgrid[0:H, 0:W].astype(np.float64)
    s = np.empty((channels, A, A, H, W))
    for u in range(A):
        for v in range(A):
            coords = [hh + margin + disparity * u, ww + margin + disparity * v]
            for c in range(channels):
                s[c, u, v] = ndimage.map_coordinates(base[c], coords, order=1, mode="nearest")
    return LightField4D(np.clip(s, 0.0, 1.0))


def synth_dataset(n, A, H, W, seed=0, channels=1, max_disparity=1.5):
    """``n`` synthetic light fields with disparities drawn uniformly in +-max_disparity."""
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        d = float(rng.uniform(-max_disparity, max_disparity))
        out.append(synth_lf(A, H, W, d, rng, channels))
    return out


def to_batch(lfs, multiple=64):
    """Stack light fields as padded MacPI tensors [N, C, AH', AW']."""
    arrs = []
    for lf in lfs:
        padded, _ = pad_lf(lf, multiple)
        arrs.append(sai_to_macpi(padded).pixels)
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ShapeError(f"light fields pad to different MacPI shapes: {sorted(shapes)}")
    return np.stack(arrs)


# training loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    model: LFCodecModel
    trace: list
    model_hash: int | None = None
    seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    def loss_drop(self, window=20):
        """Relative reduction from the step-0 loss to the mean of the last ``window`` steps."""
        j = np.array([r["J"] for r in self.trace])
        return 1.0 - float(np.mean(j[-window:])) / float(j[0])


def rate_bits(out):
    return estimate_bits(out["lik_y"]) + estimate_bits(out["lik_z"])


def train_step(model, x, lam, rng, lr, state, clip=1.0):
    """Forward, backward and Adam update on one batch; returns the loss terms."""
    params = model.parameters()
    out = model.forward(x, rng)
    n = x.shape[0]
    samples = n * x.shape[2] * x.shape[3]
    terms = rd_loss(x, out["x_hat"], rate_bits(out), lam, samples)
    model.zero_grad()
    terms.J.backward()
    grads, _ = clip_grad_norm([p.grad for p in params], clip)
    new = adam_step([p.data for p in params], grads, state, lr)
    for p, d in zip(params, new):
        p.data = d
    return terms


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for row in trace:
            w.writerow({k: (repr(float(row[k])) if k != "step" else int(row[k])) for k in TRACE_FIELDS})


def read_trace(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train_toy(cfg: CodecConfig, dataset, steps, batch_size=4, lr=1e-3, seed=None,
              schedule: PlateauSchedule | None = None, eval_every=10, clip=1.0,
              trace_path=None, checkpoint_path=None, log=None) -> TrainResult:
    """Train ``LFCodecModel(cfg)`` for ``steps`` Adam steps on ``dataset``.

    The seed (``cfg.seed`` unless overridden) fixes initialisation, batch order
    and quantisation noise, so two runs with equal arguments give identical
    traces. The plateau schedule sees the mean loss of every ``eval_every``
    steps.
    """
    seed = cfg.seed if seed is None else seed
    data = to_batch(dataset)
    model = LFCodecModel(cfg)
    model.check_input(data[:1])
    rng = np.random.default_rng(seed + 1)
    params = model.parameters()
    state = AdamState.like([p.data for p in params])
    schedule = schedule or PlateauSchedule(lr=lr)
    schedule.lr = lr
    lam = cfg.lam
    trace = []
    window = []
    j0 = None
    t0 = time.perf_counter()
    order = np.array([], dtype=np.int64)
    for step in range(steps):
        if order.size < batch_size:
            order = np.concatenate([order, rng.permutation(len(data))])
        idx, order = order[:batch_size], order[batch_size:]
        cur_lr = schedule.lr
        terms = train_step(model, data[idx], lam, rng, cur_lr, state, clip)
        j, d, r = terms.values()
        trace.append({"step": step, "J": j, "D": d, "R_bpp": r, "lr": cur_lr})
        if j0 is None:
            j0 = j
        if not math.isfinite(j) or j > DIVERGENCE_FACTOR * j0:
            if trace_path:
                write_trace(trace_path, trace)
            raise TrainingDiverged(f"loss {j:.4g} at step {step} exceeds {DIVERGENCE_FACTOR:g} x initial {j0:.4g}", trace)
        window.append(j)
        if len(window) == eval_every:
            lr_plateau(schedule, float(np.mean(window)))
            window = []
        if log and (step % 50 == 0 or step == steps - 1):
            log(f"step {step:5d}  J {j:.5f}  D {d:.5f}  R {r:.4f} bpp  lr {cur_lr:.2e}")
    result = TrainResult(model, trace, seconds=time.perf_counter() - t0)
    result.meta = {"config": cfg.to_dict(), "steps": steps, "batch_size": batch_size, "lr": lr, "seed": seed}
    if trace_path:
        write_trace(trace_path, trace)
    if checkpoint_path:
        result.model_hash = checkpoint.save(checkpoint_path, model.state_dict(), result.meta)
    return result


def load_model(path):
    """Rebuild a model from a checkpoint; returns ``(model, meta, hash)``."""
    state, meta, h = checkpoint.load(path)
    cfg = CodecConfig.from_dict(meta.get("config", {}))
    model = LFCodecModel(cfg)
    model.load_state_dict(state)
    return model, meta, h


__all__ = [
    "LAMBDA_LADDER", "AdamState", "PlateauSchedule", "RDLossTerms", "TrainResult", "TrainingDiverged",
    "adam_step", "clip_grad_norm", "load_model", "lr_plateau", "rd_loss", "read_trace", "synth_dataset",
    "synth_lf", "to_batch", "train_step", "train_toy", "write_trace",
]
