"""Compiled inner loops shared by the lognormal model and the extractor.

Everything here is scalar numba code operating on plain float arrays, so the
Python-facing modules stay readable and the hot paths stay fast.
"""
import math

import numpy as np
from numba import njit

SQRT2PI = math.sqrt(2.0 * math.pi)

# Abramowitz & Stegun 7.1.26, |error| <= 1.5e-7 on the real line.
_ERF_P = 0.3275911
_ERF_A1 = 0.254829592
_ERF_A2 = -0.284496736
_ERF_A3 = 1.421413741
_ERF_A4 = -1.453152027
_ERF_A5 = 1.061405429

# parameter layout of one component inside flat arrays
T0, MU, SIGMA, D, THS, THE = 0, 1, 2, 3, 4, 5
NPAR = 6

SIGMA_MIN, SIGMA_MAX = 0.01, 3.0
MU_MIN, MU_MAX = -6.0, 2.0
D_MIN = 1e-9


@njit(cache=True)
def erf(x):
    sign = 1.0
    if x < 0.0:
        sign = -1.0
        x = -x
    t = 1.0 / (1.0 + _ERF_P * x)
    poly = t * (_ERF_A1 + t * (_ERF_A2 + t * (_ERF_A3 + t * (_ERF_A4 + t * _ERF_A5))))
    return sign * (1.0 - poly * math.exp(-x * x))


@njit(cache=True)
def lognormal(t, t0, mu, sigma):
    dt = t - t0
    if dt <= 0.0:
        return 0.0
    z = (math.log(dt) - mu) / sigma
    return math.exp(-0.5 * z * z) / (sigma * SQRT2PI * dt)


@njit(cache=True)
def lognormal_cdf(t, t0, mu, sigma):
    dt = t - t0
    if dt <= 0.0:
        return 0.0
    return 0.5 * (1.0 + erf((math.log(dt) - mu) / (sigma * math.sqrt(2.0))))


@njit(cache=True)
def add_component(t, p, vx, vy, sign):
    """Accumulate ``sign`` times one component's velocity into vx, vy."""
    t0, mu, sigma, d, ths, the = p[0], p[1], p[2], p[3], p[4], p[5]
    dth = the - ths
    for i in range(t.shape[0]):
        lam = lognormal(t[i], t0, mu, sigma)
        if lam == 0.0:
            continue
        theta = ths + dth * lognormal_cdf(t[i], t0, mu, sigma)
        s = sign * d * lam
        vx[i] += s * math.cos(theta)
        vy[i] += s * math.sin(theta)


@njit(cache=True)
def component_sse(p, t, rx, ry, i0, i1):
    """Squared 2-D error of one component against a target residual on [i0, i1)."""
    t0, mu, sigma, d, ths, the = p[0], p[1], p[2], p[3], p[4], p[5]
    dth = the - ths
    inv = 1.0 / (sigma * math.sqrt(2.0))
    norm = 1.0 / (sigma * SQRT2PI)
    acc = 0.0
    for i in range(i0, i1):
        dt = t[i] - t0
        if dt <= 0.0:
            acc += rx[i] * rx[i] + ry[i] * ry[i]
            continue
        ln = math.log(dt) - mu
        z = ln / sigma
        lam = norm * math.exp(-0.5 * z * z) / dt
        theta = ths + dth * 0.5 * (1.0 + erf(ln * inv))
        s = d * lam
        ex = rx[i] - s * math.cos(theta)
        ey = ry[i] - s * math.sin(theta)
        acc += ex * ex + ey * ey
    return acc


@njit(cache=True)
def _clip(p, t0_lo, t0_hi):
    if p[T0] < t0_lo:
        p[T0] = t0_lo
    elif p[T0] > t0_hi:
        p[T0] = t0_hi
    if p[MU] < MU_MIN:
        p[MU] = MU_MIN
    elif p[MU] > MU_MAX:
        p[MU] = MU_MAX
    if p[SIGMA] < SIGMA_MIN:
        p[SIGMA] = SIGMA_MIN
    elif p[SIGMA] > SIGMA_MAX:
        p[SIGMA] = SIGMA_MAX
    if p[D] < D_MIN:
        p[D] = D_MIN


HALF_WIDTH = math.sqrt(2.0 * math.log(2.0))
NSHAPE = 5  # simplex coordinates: mode time, log FWHM, sigma, theta_s, theta_e


@njit(cache=True)
def to_shape(p):
    """(t0, mu, sigma, D, ths, the) -> (mode time, log FWHM, sigma, ths, the).

    Location, width and skew are far less correlated than t0, mu and sigma,
    and D drops out because it is solved for exactly (see profiled_sse).
    """
    u = np.empty(NSHAPE)
    sigma = p[SIGMA]
    tau = math.exp(p[MU] - sigma * sigma)
    u[0] = p[T0] + tau
    u[1] = math.log(2.0 * tau * math.sinh(sigma * HALF_WIDTH))
    u[2] = sigma
    u[3] = p[THS]
    u[4] = p[THE]
    return u


@njit(cache=True)
def from_shape(u, d, t0_lo, t0_hi):
    """Inverse of :func:`to_shape` with amplitude ``d``, clipped to the bounds."""
    p = np.empty(NPAR)
    sigma = min(max(u[2], SIGMA_MIN), SIGMA_MAX)
    tau = math.exp(u[1]) / (2.0 * math.sinh(sigma * HALF_WIDTH))
    p[SIGMA] = sigma
    p[MU] = math.log(tau) + sigma * sigma
    p[T0] = u[0] - tau
    p[D] = d
    p[THS] = u[3]
    p[THE] = u[4]
    _clip(p, t0_lo, t0_hi)
    return p


@njit(cache=True)
def profiled_sse(p, t, rx, ry, i0, i1, rr):
    """Least-squares amplitude for fixed timing and angles.

    The velocity is linear in D, so for the remaining parameters the best D
    is <r, g> / <g, g> with g the unit-amplitude component. Returns
    (squared error, D); ``rr`` is the target's squared norm on [i0, i1).
    """
    t0, mu, sigma, ths, the = p[0], p[1], p[2], p[4], p[5]
    dth = the - ths
    inv = 1.0 / (sigma * math.sqrt(2.0))
    norm = 1.0 / (sigma * SQRT2PI)
    rg = 0.0
    gg = 0.0
    for i in range(i0, i1):
        dt = t[i] - t0
        if dt <= 0.0:
            continue
        ln = math.log(dt) - mu
        z = ln / sigma
        lam = norm * math.exp(-0.5 * z * z) / dt
        theta = ths + dth * 0.5 * (1.0 + erf(ln * inv))
        gx = lam * math.cos(theta)
        gy = lam * math.sin(theta)
        rg += rx[i] * gx + ry[i] * gy
        gg += gx * gx + gy * gy
    if gg <= 0.0:
        return rr, D_MIN
    d = max(rg / gg, D_MIN)
    return max(rr - 2.0 * d * rg + d * d * gg, 0.0), d


@njit(cache=True)
def _eval(u, t, rx, ry, i0, i1, rr, t0_lo, t0_hi):
    p = from_shape(u, 1.0, t0_lo, t0_hi)
    return profiled_sse(p, t, rx, ry, i0, i1, rr)


@njit(cache=True)
def nelder_mead(p0, steps, t, rx, ry, i0, i1, t0_lo, t0_hi, max_iter, ftol, fatol):
    """Bounded Nelder-Mead on one component; bounds enforced by clipping.

    The simplex lives in :func:`to_shape` coordinates (``steps`` are given
    there) and D is profiled out in closed form. Returns (best_params,
    best_value). The start point is the initial best and a vertex only
    replaces it on a strict decrease, so the result never scores worse than
    ``p0``.
    """
    n = NSHAPE
    rr = 0.0
    for i in range(i0, i1):
        rr += rx[i] * rx[i] + ry[i] * ry[i]
    start = p0.copy()
    _clip(start, t0_lo, t0_hi)
    f_start = component_sse(start, t, rx, ry, i0, i1)

    simplex = np.empty((n + 1, n))
    fvals = np.empty(n + 1)
    u0 = to_shape(start)
    simplex[0] = u0
    fvals[0], _ = _eval(u0, t, rx, ry, i0, i1, rr, t0_lo, t0_hi)
    for k in range(n):
        v = u0.copy()
        v[k] += steps[k]
        simplex[k + 1] = v
        fvals[k + 1], _ = _eval(v, t, rx, ry, i0, i1, rr, t0_lo, t0_hi)

    centroid = np.empty(n)
    xr = np.empty(n)
    xe = np.empty(n)
    xc = np.empty(n)
    for _ in range(max_iter):
        order = np.argsort(fvals, kind="mergesort")
        simplex = simplex[order]
        fvals = fvals[order]
        if fvals[n] - fvals[0] <= ftol * fvals[0] + fatol:
            break
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += simplex[k, j]
            centroid[j] = s / n
        for j in range(n):
            xr[j] = centroid[j] + (centroid[j] - simplex[n, j])
        fr, _ = _eval(xr, t, rx, ry, i0, i1, rr, t0_lo, t0_hi)
        if fr < fvals[0]:
            for j in range(n):
                xe[j] = centroid[j] + 2.0 * (xr[j] - centroid[j])
            fe, _ = _eval(xe, t, rx, ry, i0, i1, rr, t0_lo, t0_hi)
            if fe < fr:
                simplex[n] = xe
                fvals[n] = fe
            else:
                simplex[n] = xr
                fvals[n] = fr
            continue
        if fr < fvals[n - 1]:
            simplex[n] = xr
            fvals[n] = fr
            continue
        if fr < fvals[n]:
            for j in range(n):
                xc[j] = centroid[j] + 0.5 * (xr[j] - centroid[j])
        else:
            for j in range(n):
                xc[j] = centroid[j] + 0.5 * (simplex[n, j] - centroid[j])
        fc, _ = _eval(xc, t, rx, ry, i0, i1, rr, t0_lo, t0_hi)
        if fc < min(fr, fvals[n]):
            simplex[n] = xc
            fvals[n] = fc
            continue
        for k in range(1, n + 1):
            for j in range(n):
                simplex[k, j] = simplex[0, j] + 0.5 * (simplex[k, j] - simplex[0, j])
            fvals[k], _ = _eval(simplex[k], t, rx, ry, i0, i1, rr, t0_lo, t0_hi)

    best = 0
    for k in range(1, n + 1):
        if fvals[k] < fvals[best]:
            best = k
    _, d = _eval(simplex[best], t, rx, ry, i0, i1, rr, t0_lo, t0_hi)
    cand = from_shape(simplex[best], d, t0_lo, t0_hi)
    f_cand = component_sse(cand, t, rx, ry, i0, i1)
    if f_cand < f_start:
        return cand, f_cand
    return start, f_start
