"""Synthetic cohort: nightly recovery drives both sleep indicators and the
variability of handwriting motor commands.

Each user gets fixed per-task stroke templates. Every (day, timing, task)
sample re-draws the template with multiplicative jitter on D and additive
jitter on t0; the jitter spread grows as ``1 + effect * (1 - recovery)``.
All randomness comes from streams keyed by (seed, user, day, timing, task,
stroke), so adding users or days leaves existing draws untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
import hashlib
import json
import math
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .features import TASKS, TIMINGS, source_id
from .inkio import RawSample, RawTrace, SleepRecord, fmt, write_sleep_csv, write_traces_csv
from .lognormal import LognormalComponent, integrate, synthesize_on

SHAPE_TASKS = TASKS[:3]

# (low, high) component count per stroke, strokes per task sample
_TASK_LAYOUT = {"shape": ((3, 5), 3), "phrase": ((8, 14), 1)}

# population means and between-user spreads of the four indicators
_POPULATION = {
    "total_sleep_h": (6.6, 0.5),
    "avg_hrv_ms": (56.3, 10.0),
    "lowest_hr_bpm": (51.8, 4.0),
    "avg_hr_bpm": (57.4, 4.0),
}
# within-user response to recovery r (per unit r) and measurement noise
_RESPONSE = {
    "total_sleep_h": (2.4, 0.3),
    "avg_hrv_ms": (28.0, 3.5),
    "lowest_hr_bpm": (-9.0, 1.2),
    "avg_hr_bpm": (-9.0, 1.2),
}
_D_JITTER = 0.10      # log-sd of D at full recovery
_T0_JITTER = 0.008    # s, sd of onset shift at full recovery
_NOISE_CORR_S = 0.01  # s, Gaussian correlation length of velocity noise
_STROKE_GAP = 0.25    # s of pen-up between strokes in a session
_STREAM = {"template": 0, "user": 1, "day": 2, "stroke": 3}


@dataclass(frozen=True)
class CohortConfig:
    users: int = 13
    days: int = 28
    timings: int = 3
    tasks: int = 5
    effect: float = 0.8
    seed: int = 0
    fs: float = 200.0
    noise_db: float | None = 25.0

    def __post_init__(self):
        for name in ("users", "days", "timings", "tasks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.timings > len(TIMINGS) or self.tasks > len(TASKS):
            raise ValueError(f"at most {len(TIMINGS)} timings and {len(TASKS)} tasks")
        if self.effect < 0:
            raise ValueError("effect must be >= 0")
        if self.fs <= 0:
            raise ValueError("fs must be positive")


@dataclass
class Cohort:
    config: CohortConfig
    traces: list
    sleep: list
    truth: list       # (stroke_id, [LognormalComponent]) per stroke
    recovery: dict    # (user, day) -> latent recovery in [0, 1]


def user_id(u: int) -> str:
    return f"u{u + 1:02d}"


def _rng(cfg, kind, *keys):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed & (2**64 - 1), _STREAM[kind], *keys]))


def _kind(task):
    return "shape" if task in SHAPE_TASKS else "phrase"


def _template(cfg, u, task_idx):
    """Per-user template: a list of strokes, each a list of components."""
    task = TASKS[task_idx]
    (lo, hi), n_strokes = _TASK_LAYOUT[_kind(task)]
    rng = _rng(cfg, "template", u, task_idx)
    scale = rng.uniform(8.0, 14.0)
    n_comp = int(rng.integers(lo, hi + 1))
    strokes = []
    for _ in range(n_strokes if _kind(task) == "phrase" else 1):
        comps = []
        t0 = 0.02
        theta = rng.uniform(-math.pi, math.pi)
        for _ in range(n_comp):
            sigma = rng.uniform(0.18, 0.30)
            mu = rng.uniform(-1.9, -1.5)
            turn = rng.uniform(0.6, 1.6) * rng.choice([-1.0, 1.0])
            c = LognormalComponent(D=scale * rng.uniform(0.95, 1.05), t0=t0, mu=mu, sigma=sigma,
                                   theta_s=theta, theta_e=theta + rng.uniform(-0.5, 0.5))
            comps.append(c)
            theta = c.theta_e + turn
            t0 = c.time_at_fraction(rng.uniform(0.75, 0.9))
        strokes.append(comps)
    if _kind(task) == "shape":
        strokes = strokes * n_strokes
    return strokes


def _jitter(template, rng, spread):
    out = []
    prev_t0 = -math.inf
    for c in template:
        d = c.D * math.exp(rng.normal(0.0, _D_JITTER * spread))
        t0 = max(c.t0 + rng.normal(0.0, _T0_JITTER * spread), prev_t0 + 1e-3)
        prev_t0 = t0
        out.append(LognormalComponent(d, t0, c.mu, c.sigma, c.theta_s, c.theta_e))
    # onsets are stroke-relative: the stroke begins at the first sample
    shift = min(0.0, out[0].t0 - 0.005)
    if shift < 0:
        out = [LognormalComponent(c.D, c.t0 - shift, c.mu, c.sigma, c.theta_s, c.theta_e) for c in out]
    return out


def render_stroke(components, fs, rng=None, noise_db=None, t_start=0.0, origin=(0.0, 0.0)):
    """Sample a component set into a pen trace (positions in mm).

    Velocity noise, when requested, is Gaussian noise low-passed to the
    handwriting band and scaled to sit exactly ``noise_db`` below the stroke's
    velocity power.
    """
    end = max(c.time_at_fraction(0.9995) for c in components) + 0.02
    n = int(math.floor(end * fs)) + 1
    t = np.arange(n) / fs
    prof = synthesize_on(t, components)
    vx, vy = prof.vx, prof.vy
    if noise_db is not None:
        nx = gaussian_filter1d(rng.normal(size=n), _NOISE_CORR_S * fs, mode="wrap")
        ny = gaussian_filter1d(rng.normal(size=n), _NOISE_CORR_S * fs, mode="wrap")
        gain = math.sqrt(np.sum(vx**2 + vy**2) / np.sum(nx**2 + ny**2) / 10 ** (noise_db / 10))
        vx = vx + gain * nx
        vy = vy + gain * ny
    x = origin[0] + integrate(vx, fs)
    y = origin[1] + integrate(vy, fs)
    return t_start + t, x, y


def _sleep(cfg, u, r_by_day):
    rng = _rng(cfg, "user", u)
    base = {k: rng.normal(m, s) for k, (m, s) in _POPULATION.items()}
    records = []
    for d, r in enumerate(r_by_day, start=1):
        drng = _rng(cfg, "day", u, d, 1)
        vals = {}
        for k, (slope, noise) in _RESPONSE.items():
            v = base[k] + slope * (r - 0.5) + drng.normal(0.0, noise)
            vals[k] = max(v, 0.1 * _POPULATION[k][0])
        records.append(SleepRecord(user_id(u), d, **vals))
    return records


def simulate_cohort(cfg: CohortConfig | None = None, with_traces: bool = True) -> Cohort:
    cfg = cfg or CohortConfig()
    traces, sleep, truth, recovery = [], [], [], {}
    for u in range(cfg.users):
        user = user_id(u)
        r_by_day = [float(_rng(cfg, "day", u, d, 0).beta(2.0, 2.0)) for d in range(1, cfg.days + 1)]
        sleep.extend(_sleep(cfg, u, r_by_day))
        templates = [_template(cfg, u, k) for k in range(cfg.tasks)]
        for d, r in enumerate(r_by_day, start=1):
            recovery[(user, d)] = r
            spread = 1.0 + cfg.effect * (1.0 - r)
            for ti in range(cfg.timings):
                clock = 0.0
                for k in range(cfg.tasks):
                    sid = source_id(user, d, TIMINGS[ti], TASKS[k])
                    for s, template in enumerate(templates[k]):
                        rng = _rng(cfg, "stroke", u, d, ti, k, s)
                        comps = _jitter(template, rng, spread)
                        truth.append((f"{sid}#{s}", comps))
                        if not with_traces:
                            continue
                        origin = (rng.uniform(0, 150), rng.uniform(0, 200))
                        t, x, y = render_stroke(comps, cfg.fs, rng, cfg.noise_db, clock, origin)
                        clock = float(t[-1]) + _STROKE_GAP
                        traces.append(RawTrace([RawSample(float(a), float(b), float(c))
                                                for a, b, c in zip(t, x, y)], sid, s))
    return Cohort(cfg, traces, sleep, truth, recovery)


def gen_ground_truth(cfg: CohortConfig | None = None) -> list:
    """Exact components behind every generated stroke, in generation order."""
    return simulate_cohort(cfg, with_traces=False).truth


def truth_to_jsonl(truth, stream) -> None:
    for sid, comps in truth:
        stream.write(json.dumps({
            "stroke_id": sid,
            "nblog": len(comps),
            "components": [{k: float(fmt(getattr(c, k))) for k in
                            ("D", "t0", "mu", "sigma", "theta_s", "theta_e")} for c in comps],
        }) + "\n")


def gen_cohort(cfg: CohortConfig, out_dir) -> dict:
    """Write traces.csv, sleep.csv and truth.jsonl; returns {name: sha256}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cohort = simulate_cohort(cfg)
    files = {
        "traces.csv": lambda fh: write_traces_csv(cohort.traces, fh),
        "sleep.csv": lambda fh: write_sleep_csv(cohort.sleep, fh),
        "truth.jsonl": lambda fh: truth_to_jsonl(cohort.truth, fh),
    }
    hashes = {}
    for name, writer in files.items():
        path = out / name
        with open(path, "w", newline="\n") as fh:
            writer(fh)
        hashes[name] = hashlib.sha256(path.read_bytes()).hexdigest()
    return hashes


def config_dict(cfg: CohortConfig) -> dict:
    return asdict(cfg)
