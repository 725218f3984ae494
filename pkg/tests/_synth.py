"""Synthetic strokes with known components, shared by several test files."""
import numpy as np

from strokelab.kinematics import Stroke
from strokelab.lognormal import LognormalComponent, synthesize

FS = 200.0


def separated_components(rng, k):
    """k components; each starts once its predecessor is 85-95% complete,
    so every component keeps its own speed peak."""
    comps, t0 = [], 0.02
    for _ in range(k):
        ths = rng.uniform(-np.pi, np.pi)
        comps.append(LognormalComponent(D=rng.uniform(5, 25), t0=t0, mu=rng.uniform(-2.0, -1.4),
                                        sigma=rng.uniform(0.15, 0.35), theta_s=ths,
                                        theta_e=ths + rng.uniform(-1, 1)))
        t0 = comps[-1].time_at_fraction(rng.uniform(0.85, 0.95))
    return comps


def stroke_of(comps, fs=FS, noise_db=None, rng=None, stroke_id=""):
    dur = max(c.time_at_fraction(0.9999) for c in comps) + 0.02
    prof, _, _ = synthesize(comps, dur, fs)
    vx, vy = prof.vx, prof.vy
    if noise_db is not None:
        nx, ny = rng.normal(size=len(vx)), rng.normal(size=len(vy))
        g = np.sqrt(np.sum(vx**2 + vy**2) / np.sum(nx**2 + ny**2) / 10 ** (noise_db / 10))
        vx, vy = vx + g * nx, vy + g * ny
    return Stroke.from_velocity(prof.t, vx, vy, stroke_id)
