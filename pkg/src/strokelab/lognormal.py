"""Lognormal primitives and the Sigma-Lognormal velocity synthesizer."""
from __future__ import annotations

from dataclasses import dataclass, astuple
import math

import numpy as np

from . import _kernels

SNR_CAP_DB = 100.0


class EmptyMotionError(ValueError):
    """Raised when a velocity profile carries no signal power."""


@dataclass(frozen=True)
class LognormalComponent:
    """One motor command: amplitude, onset, log-time location/scale, angles."""

    D: float
    t0: float
    mu: float
    sigma: float
    theta_s: float
    theta_e: float

    def validate(self, duration: float | None = None) -> "LognormalComponent":
        if not all(math.isfinite(v) for v in astuple(self)):
            raise ValueError(f"non-finite component {self}")
        if self.D <= 0:
            raise ValueError(f"D must be > 0, got {self.D}")
        if not 0 < self.sigma <= 3:
            raise ValueError(f"sigma must lie in (0, 3], got {self.sigma}")
        if not -6 <= self.mu <= 2:
            raise ValueError(f"mu must lie in [-6, 2], got {self.mu}")
        if duration is not None and self.t0 >= duration:
            raise ValueError(f"t0={self.t0} is not before the stroke end {duration}")
        return self

    @property
    def mode_time(self) -> float:
        return self.t0 + math.exp(self.mu - self.sigma**2)

    @property
    def peak_speed(self) -> float:
        return self.D * math.exp(self.sigma**2 / 2 - self.mu) / (self.sigma * math.sqrt(2 * math.pi))

    def time_at_fraction(self, phi: float) -> float:
        """Time at which the cumulative fraction of the component reaches ``phi``."""
        from scipy.special import ndtri

        return self.t0 + math.exp(self.mu + self.sigma * float(ndtri(phi)))

    def as_params(self) -> np.ndarray:
        return np.array([self.t0, self.mu, self.sigma, self.D, self.theta_s, self.theta_e])

    @classmethod
    def from_params(cls, p) -> "LognormalComponent":
        t0, mu, sigma, d, ths, the = (float(v) for v in p)
        return cls(D=d, t0=t0, mu=mu, sigma=sigma, theta_s=ths, theta_e=the)


@dataclass(frozen=True)
class VelocityProfile:
    t: np.ndarray
    vx: np.ndarray
    vy: np.ndarray

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    def __len__(self) -> int:
        return len(self.t)


def erf(x):
    """Rational-approximation error function (max abs error 1.5e-7)."""
    if np.ndim(x) == 0:
        return _kernels.erf(float(x))
    x = np.asarray(x, dtype=float)
    return np.array([_kernels.erf(v) for v in x.ravel()]).reshape(x.shape)


def lognormal_value(t, c: LognormalComponent):
    """Lognormal impulse response of ``c`` at time(s) ``t``; zero for t <= t0."""
    t = np.asarray(t, dtype=float)
    dt = t - c.t0
    out = np.zeros_like(dt)
    pos = dt > 0
    z = (np.log(dt[pos]) - c.mu) / c.sigma
    out[pos] = np.exp(-0.5 * z * z) / (c.sigma * math.sqrt(2 * math.pi) * dt[pos])
    return out if out.ndim else float(out)


def lognormal_fraction(t, c: LognormalComponent):
    """Cumulative fraction of the component elapsed at time(s) ``t``."""
    t = np.asarray(t, dtype=float)
    dt = t - c.t0
    out = np.zeros_like(dt)
    pos = dt > 0
    out[pos] = erf((np.log(dt[pos]) - c.mu) / (c.sigma * math.sqrt(2.0)))
    out[pos] = 0.5 * (1.0 + out[pos])
    return out if out.ndim else float(out)


def component_velocity(t, c: LognormalComponent) -> tuple[np.ndarray, np.ndarray]:
    t = np.ascontiguousarray(t, dtype=float)
    vx = np.zeros_like(t)
    vy = np.zeros_like(t)
    _kernels.add_component(t, c.as_params(), vx, vy, 1.0)
    return vx, vy


def synthesize_on(t, components) -> VelocityProfile:
    """Sum the component velocities on an explicit time grid."""
    t = np.ascontiguousarray(t, dtype=float)
    vx = np.zeros_like(t)
    vy = np.zeros_like(t)
    for c in components:
        _kernels.add_component(t, c.as_params(), vx, vy, 1.0)
    return VelocityProfile(t, vx, vy)


def synthesize(components, duration: float, fs: float, t_start: float = 0.0):
    """Velocity profile and integrated trajectory of a component set.

    Returns ``(profile, x, y)`` where x, y start at the origin and are the
    cumulative trapezoid of the velocity.
    """
    components = list(components)
    if not components:
        raise ValueError("at least one component is required")
    for c in components:
        c.validate()
    n = int(math.floor(duration * fs + 1e-9)) + 1
    t = t_start + np.arange(n) / fs
    prof = synthesize_on(t, components)
    return prof, integrate(prof.vx, fs), integrate(prof.vy, fs)


def integrate(v, fs: float) -> np.ndarray:
    from scipy.integrate import cumulative_trapezoid

    return cumulative_trapezoid(v, dx=1.0 / fs, initial=0.0)


def snr_db(observed: VelocityProfile, reconstructed: VelocityProfile) -> float:
    """Reconstruction SNR over the full window, capped at 100 dB."""
    if len(observed) != len(reconstructed):
        raise ValueError("profiles are on different grids")
    signal = float(np.sum(observed.vx**2 + observed.vy**2))
    if signal <= 0:
        raise EmptyMotionError("empty motion")
    noise = float(np.sum((observed.vx - reconstructed.vx) ** 2 + (observed.vy - reconstructed.vy) ** 2))
    return snr_from_powers(signal, noise)


def snr_from_powers(signal: float, noise: float) -> float:
    if noise < 1e-12 * signal:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * math.log10(signal / noise))


def speed_snr_db(observed: VelocityProfile, reconstructed: VelocityProfile) -> float:
    """Scalar-speed variant of :func:`snr_db`."""
    s = observed.speed
    signal = float(np.sum(s**2))
    if signal <= 0:
        raise EmptyMotionError("empty motion")
    return snr_from_powers(signal, float(np.sum((s - reconstructed.speed) ** 2)))
