"""Uniform resampling, smoothing and differentiation of pen traces."""
from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy.ndimage import gaussian_filter1d
from sklearn.base import BaseEstimator, TransformerMixin

from .inkio import RawTrace
from .lognormal import VelocityProfile

log = logging.getLogger(__name__)

MIN_SAMPLES = 8
DEFAULT_FS = 200.0
# span of MIN_SAMPLES samples at the default rate; shorter traces are dots
MIN_DURATION_S = (MIN_SAMPLES - 1) / DEFAULT_FS
DEFAULT_SMOOTH_S = 0.008


class StrokeTooShort(ValueError):
    pass


@dataclass(frozen=True)
class Stroke:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    fs: float
    stroke_id: str = ""

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    @property
    def velocity(self) -> VelocityProfile:
        return VelocityProfile(self.t, self.vx, self.vy)

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_velocity(cls, t, vx, vy, stroke_id: str = "") -> "Stroke":
        """Build a stroke directly from a uniformly sampled velocity."""
        from .lognormal import integrate

        t = np.asarray(t, dtype=float)
        fs = 1.0 / (t[1] - t[0])
        vx = np.asarray(vx, dtype=float)
        vy = np.asarray(vy, dtype=float)
        return cls(t, integrate(vx, fs), integrate(vy, fs), vx, vy, fs, stroke_id)


def resample_uniform(trace: RawTrace, fs: float = DEFAULT_FS):
    """Linearly interpolate a trace onto a uniform grid starting at its first sample.

    Returns ``(t, x, y)``.
    """
    if fs <= 0:
        raise ValueError("fs must be positive")
    if len(trace.samples) < 2:
        raise StrokeTooShort(f"{trace.source_id}: fewer than 2 samples")
    t_raw = np.array([s.t for s in trace.samples])
    if np.any(np.diff(t_raw) <= 0):
        raise ValueError(f"{trace.source_id}: timestamps must strictly increase")
    duration = t_raw[-1] - t_raw[0]
    if duration < MIN_DURATION_S - 1e-12:
        raise StrokeTooShort(f"{trace.source_id}: stroke too short ({duration * 1e3:.1f} ms)")
    n = int(math.floor(duration * fs + 1e-9)) + 1
    t = t_raw[0] + np.arange(n) / fs
    x = np.interp(t, t_raw, [s.x for s in trace.samples])
    y = np.interp(t, t_raw, [s.y for s in trace.samples])
    return t, x, y


def smooth_gaussian(signal, sigma_s: float, fs: float) -> np.ndarray:
    """Zero-phase Gaussian smoothing, kernel truncated at 4 sigma, reflected edges."""
    signal = np.asarray(signal, dtype=float)
    if sigma_s < 0:
        raise ValueError("sigma_s must be >= 0")
    if sigma_s == 0:
        return signal.copy()
    return gaussian_filter1d(signal, sigma_s * fs, mode="reflect", truncate=4.0)


def differentiate(t, x, y, fs: float | None = None, stroke_id: str = "") -> Stroke:
    """Central differences inside, one-sided at the ends."""
    t = np.asarray(t, dtype=float)
    if len(t) < 3:
        raise ValueError("need at least 3 samples to differentiate")
    if fs is None:
        fs = 1.0 / (t[1] - t[0])
    h = 1.0 / fs
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return Stroke(t, x, y, np.gradient(x, h, edge_order=1), np.gradient(y, h, edge_order=1), fs, stroke_id)


def preprocess(trace: RawTrace, fs: float = DEFAULT_FS, smooth_s: float = DEFAULT_SMOOTH_S,
               stroke_id: str | None = None) -> Stroke:
    t, x, y = resample_uniform(trace, fs)
    if len(t) < MIN_SAMPLES:
        raise StrokeTooShort(f"{trace.source_id}: {len(t)} samples after resampling, need {MIN_SAMPLES}")
    x = smooth_gaussian(x, smooth_s, fs)
    y = smooth_gaussian(y, smooth_s, fs)
    return differentiate(t, x, y, fs, stroke_id if stroke_id is not None else trace.source_id)


class StrokePreprocessor(BaseEstimator, TransformerMixin):
    """Turn raw traces into uniformly sampled, smoothed strokes.

    Traces that are too short are dropped; their ids end up in ``skipped_``
    after :meth:`transform`.
    """

    def __init__(self, fs=DEFAULT_FS, smooth_s=DEFAULT_SMOOTH_S):
        self.fs = fs
        self.smooth_s = smooth_s

    def fit(self, X, y=None):
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.smooth_s < 0:
            raise ValueError("smooth_s must be >= 0")
        return self

    def transform(self, X):
        strokes, self.skipped_ = [], []
        for i, trace in enumerate(X):
            sid = trace_id(trace, i)
            try:
                strokes.append(preprocess(trace, self.fs, self.smooth_s, sid))
            except StrokeTooShort as exc:
                log.warning("skipping stroke: %s", exc)
                self.skipped_.append(sid)
        return strokes


def trace_id(trace: RawTrace, index: int) -> str:
    return trace.stroke_id if trace.stroke_id else f"{trace.source_id}#{index}"
