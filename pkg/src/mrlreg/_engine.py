"""Compiled inner loop for the estimating equation.

For every event subject r of a group this computes, in O(m) memory,

* the smoothed hazard and its index-gradient at the subject's own time,
* the kernel-weighted at-risk mean of the free covariates.

The arithmetic mirrors :class:`mrlreg.smoother.HazardPaths`; the test suite
checks the two against each other.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_C = 1.0 / math.sqrt(2.0 * math.pi)
TINY = np.finfo(np.float64).tiny


@njit(cache=True, error_model="numpy", fastmath=True)
def group_terms(coords, first, ev, xl, h, hr, d, kind, kind_r, tk):
    """Return (rate, rate_grad, xl_ratio, at_risk_den, trimmed_jumps).

    ``h`` and ``kind`` smooth the hazard, ``hr`` and ``kind_r`` the at-risk
    covariate mean (kind 0 is the Gaussian, 1 the fourth-order Gaussian).
    """
    m, q = coords.shape
    ne = ev.size
    L = xl.shape[1]
    rate = np.zeros(ne)
    grad = np.zeros((ne, d))
    ratio = np.zeros((ne, L))
    den = np.zeros(ne)
    trimmed = 0
    K = np.empty(m)
    dK = np.empty((m, d))
    R = np.empty(m + 1)
    RR = np.empty(m + 1)
    dR = np.empty((m + 1, d))
    RX = np.empty((m + 1, L))
    poly = np.empty(q)
    dpoly = np.empty(q)
    norm = _C**q
    normr = _C**q
    same = True
    for c in range(q):
        norm /= h[c]
        normr /= hr[c]
        if hr[c] != h[c]:
            same = False
    if kind_r != kind:
        same = False
    KR = np.empty(m)
    for r in range(ne):
        cr = coords[ev[r]]
        for j in range(m):
            # product kernel = norm * exp(-|a|^2 / 2) * prod of polynomial factors
            ss = 0.0
            for c in range(q):
                a = (coords[j, c] - cr[c]) / h[c]
                ss += a * a
                if kind == 0:
                    poly[c] = 1.0
                    dpoly[c] = a / h[c]
                else:
                    poly[c] = 0.5 * (3.0 - a * a)
                    dpoly[c] = 0.5 * a * (5.0 - a * a) / h[c]
            e = norm * math.exp(-0.5 * ss)
            prod = e
            for c in range(q):
                prod *= poly[c]
            K[j] = prod
            if same:
                KR[j] = prod
            else:
                ss = 0.0
                prod = 1.0
                for c in range(q):
                    a = (coords[j, c] - cr[c]) / hr[c]
                    ss += a * a
                    if kind_r == 1:
                        prod *= 0.5 * (3.0 - a * a)
                KR[j] = normr * math.exp(-0.5 * ss) * prod
            # derivative with respect to the evaluation coordinate
            for c in range(d):
                others = e * dpoly[c]
                for f2 in range(q):
                    if f2 != c:
                        others *= poly[f2]
                dK[j, c] = others
        R[m] = 0.0
        RR[m] = 0.0
        for c in range(d):
            dR[m, c] = 0.0
        for c in range(L):
            RX[m, c] = 0.0
        for j in range(m - 1, -1, -1):
            R[j] = R[j + 1] + K[j]
            RR[j] = RR[j + 1] + KR[j]
            for c in range(d):
                dR[j, c] = dR[j + 1, c] + dK[j, c]
            for c in range(L):
                RX[j, c] = RX[j + 1, c] + KR[j] * xl[j, c]
        lam = 0.0
        for k in range(ne):
            w = tk[r, k]
            pos = ev[k]
            f = first[pos]
            D = R[f]
            if D < TINY:
                trimmed += 1
                continue
            J = K[pos] / D
            lam += w * J
            for c in range(d):
                grad[r, c] += w * (dK[pos, c] - J * dR[f, c]) / D
        rate[r] = lam
        f = first[ev[r]]
        den[r] = RR[f]
        if RR[f] > 0:
            for c in range(L):
                ratio[r, c] = RX[f, c] / RR[f]
    return rate, grad, ratio, den, trimmed
