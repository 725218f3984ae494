import logging

import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid

from strokelab.inkio import RawSample, RawTrace
from strokelab.kinematics import (StrokePreprocessor, StrokeTooShort, differentiate, preprocess,
                                  resample_uniform, smooth_gaussian)
from strokelab.lognormal import LognormalComponent, synthesize


def trace(ts, xs, ys=None, sid="s"):
    ys = ys if ys is not None else [0.0] * len(ts)
    return RawTrace([RawSample(t, x, y) for t, x, y in zip(ts, xs, ys)], sid)


def test_resample_linear():
    t, x, y = resample_uniform(trace([0, 1], [0, 1]), fs=4)
    assert np.allclose(t, [0, .25, .5, .75, 1])
    assert np.allclose(x, [0, .25, .5, .75, 1])


def test_resample_uniform_input_unchanged():
    ts = np.arange(20) / 200
    xs = np.sin(ts * 7)
    t, x, _ = resample_uniform(trace(ts, xs), fs=200)
    assert np.max(np.abs(np.diff(t) - 1 / 200)) < 1e-9
    assert np.allclose(x, xs, atol=1e-12)


def test_short_stroke_rejected():
    with pytest.raises(StrokeTooShort):
        resample_uniform(trace([0, 0.002, 0.005], [0, 1, 2]), fs=200)
    with pytest.raises(StrokeTooShort):
        resample_uniform(trace([0], [0]), fs=200)


def test_non_increasing_time_rejected():
    with pytest.raises(ValueError):
        resample_uniform(trace([0, 0.1, 0.1, 0.2], [0, 1, 2, 3]))


def test_smoothing_basics():
    c = np.full(50, 3.5)
    assert np.allclose(smooth_gaussian(c, 0.02, 100), 3.5)
    s = np.random.default_rng(0).random(50)
    assert np.array_equal(smooth_gaussian(s, 0.0, 100), s)
    with pytest.raises(ValueError):
        smooth_gaussian(s, -1, 100)


def test_smoothing_impulse():
    imp = np.zeros(101)
    imp[50] = 1.0
    out = smooth_gaussian(imp, 0.02, 100)
    # kernel sigma is 2 samples, truncated at 4 sigma and normalised
    k = np.exp(-0.5 * (np.arange(-8, 9) / 2.0) ** 2)
    assert out[50] == pytest.approx(k[8] / k.sum(), rel=1e-12)
    assert out.sum() == pytest.approx(1.0, abs=1e-9)


def test_smoothing_preserves_mean():
    s = np.random.default_rng(1).normal(5, 1, 400)
    assert smooth_gaussian(s, 0.008, 200).mean() == pytest.approx(s.mean(), rel=1e-6)


def test_differentiate_simple():
    t = np.arange(30) / 100
    st = differentiate(t, t.copy(), np.zeros(30))
    assert np.allclose(st.vx, 1.0) and np.allclose(st.speed, 1.0)
    st = differentiate(t, np.full(30, 2.0), np.full(30, -1.0))
    assert np.all(st.speed == 0)


def test_differentiate_lognormal_peak():
    c = LognormalComponent(5.0, 0.0, -1.8, 0.3, 0.4, 0.4)
    prof, x, y = synthesize([c], 1.0, 200)
    st = differentiate(prof.t, x, y)
    assert st.speed.max() == pytest.approx(c.peak_speed, rel=0.01)


def test_differentiate_recovers_integrated_velocity():
    fs = 200
    t = np.arange(0, 1, 1 / fs)
    v = np.sin(2 * np.pi * 3 * t) + 0.5
    x = cumulative_trapezoid(v, t, initial=0)
    st = differentiate(t, x, np.zeros_like(x))
    rmse = np.sqrt(np.mean((st.vx - v) ** 2))
    assert rmse < 0.01 * np.abs(v).max()


def test_preprocessor_skips_short(caplog):
    good = trace(np.arange(40) / 100, np.arange(40) / 10, sid="good")
    bad = trace([0, 0.01], [0, 1], sid="bad")
    pre = StrokePreprocessor(fs=200)
    with caplog.at_level(logging.WARNING):
        out = pre.fit_transform([good, bad])
    assert [s.stroke_id for s in out] == ["good"]
    assert pre.skipped_ == ["bad"]
    assert all(len(s) >= 8 for s in out)


def test_preprocess_defaults():
    st = preprocess(trace(np.arange(100) / 480, np.arange(100) / 48))
    assert st.fs == 200 and np.max(np.abs(np.diff(st.t) - 1 / 200)) < 1e-9
    assert np.all(st.speed >= 0)
