"""Sigma-Lognormal parameter extraction.

A stroke's velocity is decomposed greedily: find the strongest peak of the
residual speed, fit a lognormal to it in closed form, polish it on its own
hill with a bounded Nelder-Mead, subtract it in 2-D velocity space and
repeat until the reconstruction is good enough. Afterwards every component
is re-fitted against the stroke with the others held fixed, weak components
are pruned while the target is still met, and a joint sweep closes the fit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import _kernels
from ._util import n_threads
from .inkio import fmt
from .kinematics import Stroke
from .lognormal import (EmptyMotionError, LognormalComponent, SNR_CAP_DB, VelocityProfile,
                        snr_from_powers)

log = logging.getLogger(__name__)

HALF_WIDTH = math.sqrt(2.0 * math.log(2.0))
SQRT2PI = math.sqrt(2.0 * math.pi)
# cumulative-fraction bounds of the per-component fitting window
PHI_LO, PHI_HI = 0.001, 0.999
# modes tried per greedy step before giving up
MAX_MODE_ATTEMPTS = 6
# fraction of the mode height bounding the greedy fitting window
HILL_LEVEL = 0.1
# simplex convergence: relative spread, and absolute spread as a share of target energy
NM_FTOL = 1e-6
NM_FATOL = 1e-8
# upper bound on refinement sweeps after the greedy loop
FINAL_SWEEPS = 1
# only components carrying less than this share of the signal power are pruning candidates
PRUNE_ENERGY = 0.05
# simplex size, relative to a fresh fit, when polishing a fitted component
POLISH_STEP = 0.2
# t0 may precede the first sample by at most this much (seconds)
T0_LEAD = 1.0


class InitializationRejected(ValueError):
    """A detected mode could not be turned into a usable starting component."""


def default_sigma_grid():
    return np.geomspace(0.05, 1.0, 30)


@dataclass
class ExtractorConfig:
    snr_target_db: float = 25.0
    max_components: int = 40
    peak_floor: float = 0.05
    min_peak_separation: float = 0.02
    refine_iters: int = 200
    sigma_grid: np.ndarray = field(default_factory=default_sigma_grid)
    snr_mode: str = "velocity"
    mode_order: str = "strongest"

    def __post_init__(self):
        self.sigma_grid = np.asarray(self.sigma_grid, dtype=float)
        if self.snr_target_db <= 0 or self.max_components < 1 or self.refine_iters < 1:
            raise ValueError("snr_target_db, max_components and refine_iters must be positive")
        if not 0 < self.peak_floor < 1:
            raise ValueError("peak_floor must lie in (0, 1)")
        if self.min_peak_separation <= 0 or np.any(self.sigma_grid <= 0):
            raise ValueError("min_peak_separation and sigma_grid must be positive")
        if self.snr_mode not in ("velocity", "speed"):
            raise ValueError("snr_mode must be 'velocity' or 'speed'")


@dataclass
class StrokeDecomposition:
    components: list
    snr_db: float
    stroke_id: str = ""

    @property
    def nblog(self) -> int:
        return len(self.components)

    def to_dict(self) -> dict:
        return {
            "stroke_id": self.stroke_id,
            "nblog": self.nblog,
            "snr_db": float(fmt(self.snr_db)),
            "components": [
                {k: float(fmt(getattr(c, k))) for k in ("D", "t0", "mu", "sigma", "theta_s", "theta_e")}
                for c in self.components
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "StrokeDecomposition":
        comps = [LognormalComponent(**c) for c in d["components"]]
        if d.get("nblog", len(comps)) != len(comps):
            raise ValueError(f"{d.get('stroke_id')}: nblog does not match component list")
        return cls(comps, float(d["snr_db"]), d.get("stroke_id", ""))


def write_decompositions(decomps, stream) -> None:
    for dec in decomps:
        stream.write(dec.to_json() + "\n")


def read_decompositions(stream) -> list:
    return [StrokeDecomposition.from_dict(json.loads(line)) for line in stream if line.strip()]


# -- mode detection ------------------------------------------------------------

def detect_modes(speed, fs: float, cfg: ExtractorConfig | None = None, reference: float | None = None):
    """Local maxima above ``peak_floor * reference`` kept greedily by height,
    at least ``min_peak_separation`` apart. Returns ``[(index, value), ...]``
    sorted by value, highest first. ``reference`` defaults to the series max.
    """
    cfg = cfg or ExtractorConfig()
    speed = np.asarray(speed, dtype=float)
    n = len(speed)
    if n == 0:
        return []
    top = float(speed.max()) if reference is None else float(reference)
    if top <= 0:
        return []
    floor = cfg.peak_floor * top
    cand = []
    for i in range(n):
        v = speed[i]
        if v <= floor:
            continue
        left = speed[i - 1] if i > 0 else -np.inf
        right = speed[i + 1] if i < n - 1 else -np.inf
        if v > left and v >= right:
            cand.append((i, float(v)))
    cand.sort(key=lambda m: (-m[1], m[0]))
    min_gap = cfg.min_peak_separation * fs
    kept = []
    for i, v in cand:
        if all(abs(i - j) >= min_gap for j, _ in kept):
            kept.append((i, v))
    return kept


# -- closed-form initial estimate -------------------------------------------------

def _half_crossing(speed, i_m, step, level, v_m):
    """Distance in samples from the mode to where speed falls below ``level``.

    Returns None when a neighbouring peak intervenes first; raises when the
    series ends before the crossing.
    """
    n = len(speed)
    j = i_m
    lowest = speed[i_m]
    while True:
        k = j + step
        if k < 0 or k >= n:
            raise InitializationRejected("half-peak width truncated by the series edge")
        if speed[k] < level:
            frac = (speed[j] - level) / (speed[j] - speed[k])
            return abs(j - i_m) + frac
        if speed[k] > lowest + 0.05 * v_m:
            return None
        lowest = min(lowest, speed[k])
        j = k


def _hill_edge(speed, i_m, step, level, v_m):
    """Last index on the mode's own hill that stays at or above ``level``."""
    j = i_m
    lowest = speed[i_m]
    while 0 <= j + step < len(speed):
        k = j + step
        if speed[k] < level or speed[k] > lowest + 0.05 * v_m:
            break
        lowest = min(lowest, speed[k])
        j = k
    return j


def estimate_initial(t, rx, ry, mode, cfg: ExtractorConfig | None = None) -> LognormalComponent:
    """Closed-form starting component for one residual-speed mode.

    For each sigma in the grid, the half-peak width fixes the log-time scale,
    the peak height fixes D, and the candidate with the least squared error
    against the residual speed (on the region above a quarter of the peak)
    wins. Direction angles come from a speed-weighted linear fit of the
    residual tangent angle against the candidate's cumulative fraction.
    """
    cfg = cfg or ExtractorConfig()
    t = np.asarray(t, dtype=float)
    rx = np.asarray(rx, dtype=float)
    ry = np.asarray(ry, dtype=float)
    speed = np.hypot(rx, ry)
    n = len(speed)
    i_m, v_m = int(mode[0]), float(mode[1])
    dt = t[1] - t[0]
    if i_m <= 0 or i_m >= n - 1:
        raise InitializationRejected("mode sits on the series edge")

    # sub-sample peak position
    a, b, c = speed[i_m - 1], speed[i_m], speed[i_m + 1]
    den = a - 2 * b + c
    off = 0.5 * (a - c) / den if den < 0 else 0.0
    t_mode = t[i_m] + off * dt

    level = 0.5 * v_m
    try:
        left = _half_crossing(speed, i_m, -1, level, v_m)
    except InitializationRejected:
        left = None
        left_trunc = True
    else:
        left_trunc = False
    try:
        right = _half_crossing(speed, i_m, 1, level, v_m)
    except InitializationRejected:
        right = None
        right_trunc = True
    else:
        right_trunc = False
    if left is None and right is None:
        raise InitializationRejected(
            "half-peak width truncated" if (left_trunc or right_trunc) else "mode has no isolated flank")

    lo = _hill_edge(speed, i_m, -1, 0.25 * v_m, v_m)
    hi = _hill_edge(speed, i_m, 1, 0.25 * v_m, v_m)
    if hi - lo + 1 < 3:
        raise InitializationRejected("fitting window narrower than 3 samples")

    sig = cfg.sigma_grid
    sa = sig * HALF_WIDTH
    if left is not None and right is not None:
        tau = (left + right) * dt / (2 * np.sinh(sa))
    elif left is not None:
        tau = left * dt / (1 - np.exp(-sa))
    else:
        tau = right * dt / np.expm1(sa)
    mu = np.log(tau) + sig**2
    t0 = t_mode - tau
    d = v_m * sig * SQRT2PI * np.exp(mu - sig**2 / 2)

    tw = t[lo:hi + 1]
    lag = tw[None, :] - t0[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (np.log(np.where(lag > 0, lag, 1.0)) - mu[:, None]) / sig[:, None]
        model = np.where(lag > 0, d[:, None] * np.exp(-0.5 * z * z) / (sig[:, None] * SQRT2PI * lag), 0.0)
    err = np.sum((model - speed[None, lo:hi + 1]) ** 2, axis=1)
    ok = np.isfinite(err) & (mu >= _kernels.MU_MIN) & (mu <= _kernels.MU_MAX)
    if not ok.any():
        raise InitializationRejected("no sigma candidate within parameter bounds")
    k = int(np.argmin(np.where(ok, err, np.inf)))

    comp = LognormalComponent(D=float(d[k]), t0=float(t0[k]), mu=float(mu[k]), sigma=float(sig[k]),
                              theta_s=0.0, theta_e=0.0)
    ths, the = _fit_angles(t, rx, ry, comp, i_m)
    return LognormalComponent(comp.D, comp.t0, comp.mu, comp.sigma, ths, the)


def _fit_angles(t, rx, ry, comp, i_m):
    t_lo = comp.time_at_fraction(0.01)
    t_hi = comp.time_at_fraction(0.99)
    i0 = max(0, int(np.searchsorted(t, t_lo)))
    i1 = min(len(t), int(np.searchsorted(t, t_hi, side="right")))
    ang_mode = math.atan2(ry[i_m], rx[i_m])
    if i1 - i0 < 3:
        return ang_mode, ang_mode
    tw = t[i0:i1]
    lag = tw - comp.t0
    z = (np.log(lag) - comp.mu) / comp.sigma
    w = (np.exp(-0.5 * z * z) / lag) ** 2
    phi = 0.5 * (1 + np.vectorize(_kernels.erf)(z / math.sqrt(2.0)))
    ang = np.unwrap(np.arctan2(ry[i0:i1], rx[i0:i1]))
    j = i_m - i0
    if 0 <= j < len(ang):
        ang += ang_mode - ang[j]
    sw = w.sum()
    if sw <= 0:
        return ang_mode, ang_mode
    pm = np.sum(w * phi) / sw
    am = np.sum(w * ang) / sw
    var = np.sum(w * (phi - pm) ** 2)
    slope = np.sum(w * (phi - pm) * (ang - am)) / var if var > 1e-12 else 0.0
    return float(am - slope * pm), float(am + slope * (1 - pm))


# -- refinement ----------------------------------------------------------------

def _steps(p, scale=1.0):
    """Initial simplex offsets in shape coordinates (mode, log width, sigma,
    angles)."""
    tau = math.exp(p[1] - p[2] ** 2)
    width = 2.0 * tau * math.sinh(p[2] * HALF_WIDTH)
    return scale * np.array([0.05 * width, 0.05, 0.1 * p[2], 0.05, 0.05])


def _window(t, p, lo=PHI_LO, hi=PHI_HI):
    """Index range where the component's cumulative fraction lies in [lo, hi]."""
    c = LognormalComponent.from_params(p)
    i0 = int(np.searchsorted(t, c.time_at_fraction(lo)))
    i1 = int(np.searchsorted(t, c.time_at_fraction(hi), side="right"))
    i0, i1 = max(0, i0), min(len(t), i1)
    if i1 - i0 < 3:
        return 0, len(t)
    return i0, i1


def _fit_block(t, p, rx, ry, i0, i1, iters, t_end, scale=1.0):
    energy = float(np.sum(rx[i0:i1] ** 2 + ry[i0:i1] ** 2))
    return _kernels.nelder_mead(p, _steps(p, scale), t, rx, ry, i0, i1, t[0] - T0_LEAD, t_end, iters,
                                NM_FTOL, NM_FATOL * energy)


def _reseed(t, rx, ry, i0, i1, cfg):
    """Fresh closed-form start from the strongest target sample in [i0, i1)."""
    speed = np.hypot(rx[i0:i1], ry[i0:i1])
    j = i0 + int(np.argmax(speed))
    try:
        return estimate_initial(t, rx, ry, (j, float(np.hypot(rx[j], ry[j]))), cfg).as_params()
    except InitializationRejected:
        return None


def _overlapping(t, params, k):
    """Indices of components whose fitting windows intersect component k's."""
    a0, a1 = _window(t, params[k])
    out = []
    for j, p in enumerate(params):
        b0, b1 = _window(t, p)
        if b0 < a1 and a0 < b1:
            out.append(j)
    return out


def _refine_params(t, vx, vy, params, cfg, joint=True, reseed=True, only=None):
    """Per-component pass on each component's own window, then (optionally)
    one joint sweep. ``params`` is modified in place.

    With ``reseed`` the per-component pass also starts a second simplex from a
    closed-form estimate of the component's current target, which lets a
    component leave a poor basin once its neighbours fit better. Any update is
    kept only if it lowers the squared error over the whole stroke.
    """
    n = len(t)
    t_end = t[-1]
    iters = cfg.refine_iters
    order = range(len(params)) if only is None else only
    recon_x = np.zeros(n)
    recon_y = np.zeros(n)
    for p in params:
        _kernels.add_component(t, p, recon_x, recon_y, 1.0)

    def sweep(window_of, use_reseed):
        for k in order:
            p = params[k]
            rx = vx - recon_x
            ry = vy - recon_y
            _kernels.add_component(t, p, rx, ry, 1.0)
            i0, i1 = window_of(p)
            best = p
            best_sse = _kernels.component_sse(p, t, rx, ry, 0, n)
            # an already fitted component only needs a small simplex
            starts = [(p, POLISH_STEP)]
            if use_reseed:
                alt = _reseed(t, rx, ry, i0, i1, cfg)
                if alt is not None:
                    starts.append((alt, 1.0))
            for start, scale in starts:
                new, _ = _fit_block(t, start, rx, ry, i0, i1, iters, t_end, scale)
                sse = _kernels.component_sse(new, t, rx, ry, 0, n)
                if sse < best_sse:
                    best, best_sse = new, sse
            if best is not p:
                _kernels.add_component(t, p, recon_x, recon_y, -1.0)
                _kernels.add_component(t, best, recon_x, recon_y, 1.0)
                params[k] = best

    sweep(lambda p: _window(t, p), reseed)
    if joint:
        # the component's error is negligible outside this span; acceptance above
        # still uses the full stroke
        sweep(lambda p: _window(t, p, 1e-6, 1 - 1e-6), False)
    return params


def refine(observed: VelocityProfile, components, cfg: ExtractorConfig | None = None, joint: bool = True):
    """Polish a component list against an observed 2-D velocity.

    Each component is optimised in turn (bounded Nelder-Mead over t0, mu,
    sigma, D and both angles) with the others held fixed; a joint sweep
    against the whole stroke follows. The total squared error never goes up.
    """
    cfg = cfg or ExtractorConfig()
    comps = list(components)
    if not comps:
        raise ValueError("refine needs at least one component")
    t = np.ascontiguousarray(observed.t, dtype=float)
    params = [c.as_params() for c in comps]
    _refine_params(t, np.asarray(observed.vx, float), np.asarray(observed.vy, float), params, cfg, joint)
    return [LognormalComponent.from_params(p) for p in params]


def _sse(t, vx, vy, params):
    rx = vx.copy()
    ry = vy.copy()
    for p in params:
        _kernels.add_component(t, p, rx, ry, -1.0)
    return float(np.sum(rx * rx + ry * ry))


def total_sse(observed: VelocityProfile, components) -> float:
    t = np.ascontiguousarray(observed.t, dtype=float)
    rx = np.array(observed.vx, dtype=float)
    ry = np.array(observed.vy, dtype=float)
    for c in components:
        _kernels.add_component(t, c.as_params(), rx, ry, -1.0)
    return float(np.sum(rx * rx + ry * ry))


# -- full extraction -----------------------------------------------------------

def _snr(vx, vy, rx_recon, ry_recon, mode, signal):
    if mode == "speed":
        s = np.hypot(vx, vy)
        return snr_from_powers(float(np.sum(s * s)), float(np.sum((s - np.hypot(rx_recon, ry_recon)) ** 2)))
    return snr_from_powers(signal, float(np.sum((vx - rx_recon) ** 2 + (vy - ry_recon) ** 2)))


def _prune(t, vx, vy, params, cfg, signal):
    """Drop the weakest components while the remainder, with its neighbours
    refitted, still meets the SNR target; the smallest adequate model wins."""
    n = len(t)
    while len(params) > 1:
        energy = []
        for p in params:
            cx, cy = np.zeros(n), np.zeros(n)
            _kernels.add_component(t, p, cx, cy, 1.0)
            energy.append(float(np.sum(cx * cx + cy * cy)))
        k = int(np.argmin(energy))
        if energy[k] > PRUNE_ENERGY * signal:
            break
        near = [j - (j > k) for j in _overlapping(t, params, k) if j != k]
        trial = [q.copy() for j, q in enumerate(params) if j != k]
        _refine_params(t, vx, vy, trial, cfg, joint=False, reseed=False, only=near)
        recon_x, recon_y = np.zeros(n), np.zeros(n)
        for q in trial:
            _kernels.add_component(t, q, recon_x, recon_y, 1.0)
        if _snr(vx, vy, recon_x, recon_y, cfg.snr_mode, signal) < cfg.snr_target_db:
            break
        params = trial
    return params


def extract_stroke(stroke: Stroke, cfg: ExtractorConfig | None = None, history: list | None = None):
    """Decompose a stroke into lognormal components.

    Onsets are measured from the stroke's first sample, so components do not
    depend on where the stroke sits in its session. ``history``, when given, receives the reconstruction SNR after every
    accepted greedy step.
    """
    cfg = cfg or ExtractorConfig()
    t = np.ascontiguousarray(stroke.t - stroke.t[0], dtype=float)
    vx = np.ascontiguousarray(stroke.vx, dtype=float)
    vy = np.ascontiguousarray(stroke.vy, dtype=float)
    n = len(t)
    signal = float(np.sum(vx * vx + vy * vy))
    if signal <= 0:
        raise EmptyMotionError(f"{stroke.stroke_id}: empty motion")
    fs = stroke.fs
    ref = float(np.hypot(vx, vy).max())

    recon_x = np.zeros(n)
    recon_y = np.zeros(n)
    params = []
    resid_power = signal
    while len(params) < cfg.max_components:
        if _snr(vx, vy, recon_x, recon_y, cfg.snr_mode, signal) >= cfg.snr_target_db:
            break
        rx = vx - recon_x
        ry = vy - recon_y
        modes = detect_modes(np.hypot(rx, ry), fs, cfg, reference=ref)
        accepted = False
        if cfg.mode_order == "earliest":
            modes.sort(key=lambda m: m[0])
        for mode in modes[:MAX_MODE_ATTEMPTS]:
            try:
                c0 = estimate_initial(t, rx, ry, mode, cfg)
            except InitializationRejected:
                continue
            p = c0.as_params()
            # fit only the mode's own hill so a neighbouring peak is not absorbed
            sp = np.hypot(rx, ry)
            i0 = _hill_edge(sp, mode[0], -1, HILL_LEVEL * mode[1], mode[1])
            i1 = _hill_edge(sp, mode[0], 1, HILL_LEVEL * mode[1], mode[1]) + 1
            p, _ = _fit_block(t, p, rx, ry, i0, i1, cfg.refine_iters, t[-1])
            tx = recon_x.copy()
            ty = recon_y.copy()
            _kernels.add_component(t, p, tx, ty, 1.0)
            power = float(np.sum((vx - tx) ** 2 + (vy - ty) ** 2))
            if power < resid_power:
                params.append(p)
                recon_x, recon_y, resid_power = tx, ty, power
                accepted = True
                if history is not None:
                    history.append(_snr(vx, vy, recon_x, recon_y, cfg.snr_mode, signal))
                break
        if not accepted:
            break

    if params:
        for _ in range(FINAL_SWEEPS):
            before = _sse(t, vx, vy, params)
            _refine_params(t, vx, vy, params, cfg, joint=True, reseed=False)
            if _sse(t, vx, vy, params) > (1.0 - 1e-3) * before:
                break
        count = len(params)
        params = _prune(t, vx, vy, params, cfg, signal)
        if len(params) < count:
            _refine_params(t, vx, vy, params, cfg, joint=True)
    params.sort(key=lambda p: p[0])
    comps = [LognormalComponent.from_params(p) for p in params]
    recon_x = np.zeros(n)
    recon_y = np.zeros(n)
    for p in params:
        _kernels.add_component(t, p, recon_x, recon_y, 1.0)
    snr = _snr(vx, vy, recon_x, recon_y, cfg.snr_mode, signal)
    return StrokeDecomposition(comps, snr, stroke.stroke_id)


def _extract_many(strokes, cfg):
    out = []
    for s in strokes:
        try:
            out.append(extract_stroke(s, cfg))
        except EmptyMotionError as exc:
            log.warning("skipping stroke: %s", exc)
    return out


class SigmaLognormalExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer: list of Stroke -> list of StrokeDecomposition.

    Zero-motion strokes are dropped with a warning. ``n_jobs`` > 1 splits the
    work into contiguous chunks so output order matches input order.
    """

    def __init__(self, snr_target_db=25.0, max_components=40, peak_floor=0.05,
                 min_peak_separation=0.02, refine_iters=200, snr_mode="velocity", n_jobs=None):
        self.snr_target_db = snr_target_db
        self.max_components = max_components
        self.peak_floor = peak_floor
        self.min_peak_separation = min_peak_separation
        self.refine_iters = refine_iters
        self.snr_mode = snr_mode
        self.n_jobs = n_jobs

    def _config(self):
        return ExtractorConfig(self.snr_target_db, self.max_components, self.peak_floor,
                               self.min_peak_separation, self.refine_iters, snr_mode=self.snr_mode)

    def fit(self, X, y=None):
        self._config()
        return self

    def transform(self, X):
        cfg = self._config()
        strokes = list(X)
        jobs = n_threads(self.n_jobs)
        if jobs <= 1 or len(strokes) < 2 * jobs:
            return _extract_many(strokes, cfg)
        from joblib import Parallel, delayed

        chunks = np.array_split(np.arange(len(strokes)), jobs * 4)
        parts = Parallel(n_jobs=jobs)(
            delayed(_extract_many)([strokes[i] for i in idx], cfg) for idx in chunks if len(idx))
        return [d for part in parts for d in part]
