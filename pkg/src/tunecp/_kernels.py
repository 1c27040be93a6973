"""Compiled inner loops for the all-location scans.

Every kernel takes a 1-D prefix-sum array ``p`` with ``p[0] = 0`` so that the
sum over the 1-based block ``(a, b]`` is ``p[b] - p[a]``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def segment_scan(p, stride):
    """Max over ``0 <= lo < tau < hi <= n`` of the two-segment z-statistic.

    Only ``lo`` and ``hi`` on the stride grid (plus ``0`` and ``n``) are
    visited; ``tau`` always runs over every interior point.
    """
    n = p.shape[0] - 1
    weight = np.empty((n + 1, n + 1))
    for a in range(1, n + 1):
        for b in range(1, n + 1):
            weight[a, b] = float(a * b * (a + b))
    best = 0.0
    lo = 0
    while lo < n:
        for tau in range(lo + 1, n):
            m1 = tau - lo
            left = p[tau] - p[lo]
            pt = p[tau]
            row = weight[m1]
            local = 0.0
            if stride == 1:
                # contiguous loop so the compiler can vectorise it
                for hi in range(tau + 1, n + 1):
                    m2 = hi - tau
                    c = m2 * left - m1 * (p[hi] - pt)
                    v = c * c / row[m2]
                    if v > local:
                        local = v
            else:
                hi = tau + 1
                while True:
                    m2 = hi - tau
                    c = m2 * left - m1 * (p[hi] - pt)
                    v = c * c / row[m2]
                    if v > local:
                        local = v
                    if hi == n:
                        break
                    hi = min(hi + stride, n)
            if local > best:
                best = local
        lo += stride
    return math.sqrt(best)


@njit(cache=True, nogil=True)
def max_cusum_profile(p, h, lam):
    """Trimmed within-window max-CUSUM at every ``tau = h, ..., n-h``."""
    n = p.shape[0] - 1
    two_h = 2 * h
    m = n - two_h + 1
    out = np.empty(m)
    for a in range(m):
        b = a + two_h
        total = p[b] - p[a]
        best = 0.0
        for j in range(lam + 1, two_h - lam):
            left = p[a + j] - p[a]
            # j(2h-j)/(2h) * (left/j - (total-left)/(2h-j))^2
            contrast = (two_h - j) * left - j * (total - left)
            val = contrast * contrast / (j * (two_h - j) * two_h)
            if val > best:
                best = val
        out[a] = math.sqrt(best)
    return out


@njit(cache=True, nogil=True)
def wmw_scan(z, h):
    """Per-location WMW rank sums for ``tau = h, ..., n-h`` (integer valued)."""
    n = z.shape[0]
    m = n - 2 * h + 1
    out = np.empty(m, dtype=np.int64)
    for a in range(m):
        total = 0
        for i in range(a + h, a + 2 * h):
            zi = z[i]
            for j in range(a, a + 2 * h):
                if z[j] <= zi:
                    total += 1
        out[a] = total
    return out


@njit(cache=True, nogil=True)
def selfnorm_scan(p, h):
    """Per-location self-normalised ratios for ``tau = h, ..., n-h``."""
    n = p.shape[0] - 1
    m = n - 2 * h + 1
    out = np.empty(m)
    hh = float(h)
    norm_full = (2.0 * hh) ** 1.5
    norm_half = hh ** 1.5
    for a in range(m):
        tau = a + h
        b = a + 2 * h
        top = ((b - tau) * (p[tau] - p[a]) - (tau - a) * (p[b] - p[tau])) / norm_full
        acc = 0.0
        for j in range(a + 1, tau + 1):
            v = ((tau - j) * (p[j] - p[a]) - (j - a) * (p[tau] - p[j])) / norm_half
            acc += v * v
        for j in range(tau + 1, b + 1):
            v = ((b - j) * (p[j] - p[tau]) - (j - tau) * (p[b] - p[j])) / norm_half
            acc += v * v
        denom = acc / hh
        out[a] = top * top / denom if denom > 0 else np.nan
    return out


@njit(cache=True, nogil=True)
def selfnorm_wiener_sup(w, mesh, t_lo, t_hi):
    """Sup over grid times of ``L^2 / V`` for a Brownian path sampled on a grid.

    ``w[k]`` is the path at time ``k / mesh``. The within-unit integrals are
    Riemann sums over the ``mesh`` grid points in each half-interval.
    """
    best = -1.0
    du = 1.0 / mesh
    for c in range(t_lo, t_hi + 1):
        lo = c - mesh
        hi = c + mesh
        # L_{t,t-1,t+1} = 2^{-3/2} [ (t+1-t)(W(t)-W(t-1)) - (t-(t-1))(W(t+1)-W(t)) ]
        top = ((w[c] - w[lo]) - (w[hi] - w[c])) / (2.0 ** 1.5)
        acc = 0.0
        for k in range(lo + 1, c + 1):
            u = (k - lo) * du
            v = (1.0 - u) * (w[k] - w[lo]) - u * (w[c] - w[k])
            acc += v * v
        for k in range(c + 1, hi + 1):
            u = (k - c) * du
            v = (1.0 - u) * (w[k] - w[c]) - u * (w[hi] - w[k])
            acc += v * v
        denom = acc * du
        if denom > 0:
            val = top * top / denom
            if val > best:
                best = val
    return best


@njit(cache=True, nogil=True)
def pelt_gaussian(s1, s2, penalty):
    """PELT for the Gaussian mean-change cost; returns the last-change array.

    ``s1``/``s2`` are ``(n+1, d)`` prefix sums of the pre-scaled values and
    their squares; the cost of ``(a, b]`` is ``sum_k [S2 - S1^2/(b-a)]``.
    """
    n = s1.shape[0] - 1
    d = s1.shape[1]
    f = np.empty(n + 1)
    f[0] = -penalty
    last = np.zeros(n + 1, dtype=np.int64)
    cand = np.empty(n + 1, dtype=np.int64)
    vals = np.empty(n + 1)
    cand[0] = 0
    ncand = 1
    for t in range(1, n + 1):
        best = np.inf
        arg = 0
        for c in range(ncand):
            s = cand[c]
            m = t - s
            cost = 0.0
            for k in range(d):
                q = s1[t, k] - s1[s, k]
                cost += (s2[t, k] - s2[s, k]) - q * q / m
            v = f[s] + cost
            vals[c] = v
            v = v + penalty
            if v < best:
                best = v
                arg = s
        f[t] = best
        last[t] = arg
        keep = 0
        for c in range(ncand):
            if vals[c] <= best:
                cand[keep] = cand[c]
                keep += 1
        cand[keep] = t
        ncand = keep + 1
    return last
