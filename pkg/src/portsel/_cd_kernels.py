"""Numba kernels for the coordinate-descent inner sweeps.

One cyclic pass over the requested coordinate indices, updating theta in
place together with either the running Gram product s = G theta
(covariance mode) or the residual vector (naive mode).  The update math
lives here once; the Python layer handles warm starts, active sets,
convergence, and traces.
"""

from __future__ import annotations

import numpy as np
from numba import njit

PEN_LASSO = 0
PEN_ADALASSO = 1
PEN_ENET = 2
PEN_RIDGE = 3
PEN_SCAD = 4


@njit(cache=True)
def _soft(z, cut):
    if z > cut:
        return z - cut
    if z < -cut:
        return z + cut
    return 0.0


@njit(cache=True)
def _scad_pen(t, lam, a):
    t = abs(t)
    if t <= lam:
        return lam * t
    if t <= a * lam:
        return (2.0 * a * lam * t - t * t - lam * lam) / (2.0 * (a - 1.0))
    return lam * lam * (a + 1.0) / 2.0


@njit(cache=True)
def scad_update(z, v, lam, a):
    """Exact minimizer of 0.5*v*t^2 - z*t + scad(|t|; lam, a).

    Three-branch firm threshold when the problem is coordinate-convex
    (v*(a-1) > 1); candidate evaluation otherwise.
    """
    if lam == 0.0:
        return z / v
    az = abs(z)
    if v * (a - 1.0) > 1.0:
        if az <= lam * (1.0 + v):
            return _soft(z, lam) / v
        if az <= a * lam * v:
            return _soft(z, a * lam / (a - 1.0)) / (v - 1.0 / (a - 1.0))
        return z / v

    sign = 1.0 if z >= 0.0 else -1.0
    best_t = _soft(az, lam) / v
    if best_t > lam:
        best_t = lam
    best_g = 0.5 * v * best_t * best_t - az * best_t + _scad_pen(best_t, lam, a)
    for cand in (lam, a * lam, az / v if az / v > a * lam else a * lam):
        g = 0.5 * v * cand * cand - az * cand + _scad_pen(cand, lam, a)
        if g < best_g:
            best_g = g
            best_t = cand
    denom = v - 1.0 / (a - 1.0)
    if denom > 0.0:
        t2 = (az - a * lam / (a - 1.0)) / denom
        if t2 < lam:
            t2 = lam
        elif t2 > a * lam:
            t2 = a * lam
        g = 0.5 * v * t2 * t2 - az * t2 + _scad_pen(t2, lam, a)
        if g < best_g:
            best_t = t2
    return sign * best_t


@njit(cache=True)
def coordinate_update(code, z, v, strength, mix, a, weight):
    if code == PEN_LASSO:
        return _soft(z, strength) / v
    if code == PEN_ADALASSO:
        return _soft(z, strength * weight) / v
    if code == PEN_ENET:
        return _soft(z, strength * mix) / (v + 2.0 * strength * (1.0 - mix))
    if code == PEN_RIDGE:
        return z / (v + 2.0 * strength)
    return scad_update(z, v, strength, a)


@njit(cache=True)
def sweep_gram(theta, s, corr, v, ok, G, indices, code, strength, mix, a, weights):
    """One cyclic pass using the symmetric Gram matrix; returns max |delta|."""
    biggest = 0.0
    for i in range(indices.shape[0]):
        k = indices[i]
        if not ok[k]:
            continue
        old = theta[k]
        z = corr[k] - s[k] + v[k] * old
        new = coordinate_update(code, z, v[k], strength, mix, a, weights[k])
        if new != old:
            delta = new - old
            theta[k] = new
            row = G[k]
            for j in range(s.shape[0]):
                s[j] += delta * row[j]
            if abs(delta) > biggest:
                biggest = abs(delta)
    return biggest


@njit(cache=True)
def sweep_resid(theta, resid, v, ok, A_rows, scale, indices, code, strength, mix, a,
                weights):
    """One cyclic pass maintaining the residual; A_rows is (K, T) row-major."""
    biggest = 0.0
    T = resid.shape[0]
    for i in range(indices.shape[0]):
        k = indices[i]
        if not ok[k]:
            continue
        old = theta[k]
        row = A_rows[k]
        acc = 0.0
        for t in range(T):
            acc += row[t] * resid[t]
        z = acc * scale + v[k] * old
        new = coordinate_update(code, z, v[k], strength, mix, a, weights[k])
        if new != old:
            delta = new - old
            theta[k] = new
            for t in range(T):
                resid[t] -= delta * row[t]
            if abs(delta) > biggest:
                biggest = abs(delta)
    return biggest
