import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfcodec import train
from lfcodec.codec.model import LAMBDA_LADDER, CodecConfig
from lfcodec.errors import NumericError, ParameterError
from lfcodec.selftest import E2E_TOL, codec_loss_case
from lfcodec.train import (
    AdamState,
    PlateauSchedule,
    TrainingDiverged,
    adam_step,
    clip_grad_norm,
    load_model,
    lr_plateau,
    rd_loss,
    read_trace,
    synth_dataset,
    synth_lf,
    to_batch,
    train_toy,
)


# loss ---------------------------------------------------------------------------

def test_rd_loss_examples():
    x = np.random.default_rng(0).random((1, 1, 4, 4))
    assert rd_loss(x, x, 0.0, 0.003, 16).values() == (0.0, 0.0, 0.0)
    for lam in LAMBDA_LADDER:
        j, d, r = rd_loss(np.zeros(4), np.ones(4), 0.0, lam, 4).values()
        assert j == 1.0 and d == 1.0
    j, d, r = rd_loss(np.zeros(4), np.ones(4) * 0.5, 32.0, 0.5, 4).values()
    assert (d, r, j) == (0.25, 8.0, 4.25)


def test_ladder_verbatim():
    assert LAMBDA_LADDER == (0.00015, 0.0002, 0.0006, 0.001, 0.003)


def test_negative_lambda():
    with pytest.raises(ParameterError):
        rd_loss(np.zeros(2), np.zeros(2), 1.0, -1e-3, 2)


@given(st.floats(0, 10), st.floats(0, 1e6), st.integers(0, 2**31))
def test_loss_non_negative(lam, bits, seed):
    rng = np.random.default_rng(seed)
    j, d, r = rd_loss(rng.random(8), rng.random(8), bits, lam, 8).values()
    assert j >= 0 and d >= 0 and r >= 0


# Adam ------------------------------------------------------------------------------

def test_adam_zero_gradient():
    p = [np.array([1.5, -2.0])]
    state = AdamState([np.array([0.2, 0.1])], [np.array([0.3, 0.4])])
    out = adam_step(p, [np.zeros(2)], state, 1e-3)
    assert state.m[0].tolist() == pytest.approx([0.18, 0.09])
    assert state.v[0].tolist() == pytest.approx([0.2997, 0.3996])
    assert state.t == 1
    # Non-zero old moments still move the parameter; with fresh state nothing moves.
    fresh = AdamState.like(p)
    assert np.array_equal(adam_step(p, [np.zeros(2)], fresh, 1e-3)[0], p[0])


def test_adam_first_step_closed_form():
    lr = 1e-4
    out = adam_step([np.array(0.0)], [np.array(1.0)], AdamState.like([np.array(0.0)]), lr)[0]
    assert abs(out - (-lr / (1.0 + 1e-8))) <= 1e-18
    assert abs(out + lr) <= 1e-12


def test_adam_matches_hand_trace():
    grads = [0.5, -1.0, 2.0, 0.0, 0.25]
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p, m, v, ref = 1.0, 0.0, 0.0, []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        ref.append(p)
    state, cur = AdamState.like([np.array(1.0)]), [np.array(1.0)]
    for g, want in zip(grads, ref):
        cur = adam_step(cur, [np.array(g)], state, lr)
        assert abs(float(cur[0]) - want) <= 1e-15


def test_adam_nan_gradient():
    with pytest.raises(NumericError):
        adam_step([np.zeros(2)], [np.array([0.0, np.nan])], AdamState.like([np.zeros(2)]), 1e-3)


def test_clip_grad_norm():
    grads, total = clip_grad_norm([np.array([3.0]), np.array([4.0])], 1.0)
    assert total == 5.0
    assert np.sqrt(sum(float(g @ g) for g in grads)) == pytest.approx(1.0)
    same, _ = clip_grad_norm([np.array([0.3])], 1.0)
    assert same[0][0] == 0.3


# plateau schedule ----------------------------------------------------------------------

def test_plateau_improving_keeps_lr():
    s = PlateauSchedule(lr=1e-4, patience=2)
    assert all(lr_plateau(s, 10.0 - i) == 1e-4 for i in range(10))


def test_plateau_flat_metric_halves():
    s = PlateauSchedule(lr=1e-4, factor=0.5, patience=2)
    lr_plateau(s, 1.0)
    lrs = [lr_plateau(s, 1.0) for _ in range(2)]
    assert lrs == [1e-4, 5e-5]


@given(st.lists(st.floats(0, 10), min_size=1, max_size=200))
def test_plateau_non_increasing_and_bounded(metrics):
    s = PlateauSchedule(lr=1e-4, patience=1, min_lr=1e-6)
    lrs = [lr_plateau(s, m) for m in metrics]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert min(lrs) >= 1e-6


# synthetic data --------------------------------------------------------------------------

def test_zero_disparity_views_identical():
    lf = synth_lf(3, 16, 16, 0.0, np.random.default_rng(0))
    for u in range(3):
        for v in range(3):
            assert np.array_equal(lf.samples[:, u, v], lf.samples[:, 0, 0])


def test_integer_disparity_is_whole_pixel_shift():
    lf = synth_lf(3, 20, 20, 1.0, np.random.default_rng(1))
    s = lf.samples[0]
    for u in range(3):
        for v in range(3):
            assert np.array_equal(s[u, v, : 20 - u, : 20 - v], s[0, 0, u:, v:])


def test_epi_slope_from_autocorrelation():
    lf = synth_lf(5, 8, 96, 1.0, np.random.default_rng(2))
    epi = lf.samples[0, 2, :, 4, :]  # V-W plane at u=2, h=4
    for v in range(1, 5):
        a, b = epi[0] - epi[0].mean(), epi[v] - epi[v].mean()
        shifts = range(-4, 5)
        scores = [np.dot(a[8:-8], np.roll(b, s)[8:-8]) for s in shifts]
        assert list(shifts)[int(np.argmax(scores))] == v


def test_dataset_deterministic_and_in_range():
    a, b = synth_dataset(3, 2, 16, 16, seed=4), synth_dataset(3, 2, 16, 16, seed=4)
    assert all(x == y for x, y in zip(a, b))
    assert all(x.in_range() for x in a)
    assert to_batch(a).shape == (3, 1, 64, 64)


# training loop --------------------------------------------------------------------------------

def test_training_deterministic(tmp_path):
    data = synth_dataset(4, 2, 32, 32, seed=0)
    r1 = train_toy(CodecConfig.tiny(), data, 3, batch_size=2, trace_path=tmp_path / "t.csv",
                   checkpoint_path=tmp_path / "a.lft")
    r2 = train_toy(CodecConfig.tiny(), data, 3, batch_size=2, checkpoint_path=tmp_path / "b.lft")
    assert r1.trace == r2.trace and r1.model_hash == r2.model_hash
    assert read_trace(tmp_path / "t.csv") == r1.trace
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,J,D,R_bpp,lr"
    model, meta, h = load_model(tmp_path / "a.lft")
    assert h == r1.model_hash and meta["steps"] == 3
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), r1.model.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)


def test_divergence_aborts_with_trace(monkeypatch):
    monkeypatch.setattr(train, "DIVERGENCE_FACTOR", 0.5)
    data = synth_dataset(2, 2, 32, 32, seed=0)
    with pytest.raises(TrainingDiverged) as info:
        train_toy(CodecConfig.tiny(), data, 5, batch_size=1)
    assert len(info.value.trace) == 1


def test_end_to_end_gradient_fifty_parameters():
    assert codec_loss_case(11, n_params=50) <= E2E_TOL
