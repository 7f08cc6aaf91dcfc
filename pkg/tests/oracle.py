"""Brute-force reference implementations written as plain loops.

Nothing here imports the package's numerical code; only the data containers
are shared. Every quantity is computed straight from its defining sum so the
vectorized estimators can be checked against it on tiny datasets.
"""

import math

import numpy as np

SQ2PI = math.sqrt(2 * math.pi)
TRIM = 1e-10
RATE_FLOOR = 1e-12


def k1(kind, a):
    phi = math.exp(-0.5 * a * a) / SQ2PI
    return phi if kind == "gauss2" else 0.5 * (3 - a * a) * phi


def k1_prime(kind, a):
    phi = math.exp(-0.5 * a * a) / SQ2PI
    if kind == "gauss2":
        return -a * phi
    return -0.5 * a * (5 - a * a) * phi


def kprod(kind, cj, c, h):
    out = 1.0
    for q in range(len(h)):
        out *= k1(kind, (cj[q] - c[q]) / h[q]) / h[q]
    return out


def kprod_grad(kind, cj, c, h, d):
    """d/dc_k of prod_q K((cj_q - c_q)/h_q)/h_q for k < d."""
    g = []
    for k in range(d):
        val = 1.0
        for q in range(len(h)):
            a = (cj[q] - c[q]) / h[q]
            if q == k:
                val *= -k1_prime(kind, a) / (h[q] * h[q])
            else:
                val *= k1(kind, a) / h[q]
        g.append(val)
    return g


class Group:
    """One transplant group unpacked into python lists."""

    def __init__(self, data, beta, transplant):
        self.transplant = transplant
        self.d = beta.d
        lower = beta.lower
        self.subj = []
        for i in range(data.n):
            if bool(data.transplanted[i]) != transplant:
                continue
            x = [float(v) for v in data.x[i]]
            v = [x[k] + sum(x[beta.d + l] * lower[l, k] for l in range(lower.shape[0])) for k in range(beta.d)]
            w = float(data.w_filled[i]) if transplant else None
            u = float(data.z[i]) - (w if transplant else 0.0)
            c = v + ([w] if transplant else [])
            self.subj.append(dict(i=i, x=x, v=v, c=c, u=u, w=w, delta=bool(data.delta[i])))
        self.tau = float(data.tau)


def jumps(grp, c, bw, with_grad=False):
    """[(u_k, jump, grad_jump)] for every event of the group at coordinate c."""
    kind = bw.kernel.value
    h = bw.h
    out = []
    for ek in grp.subj:
        if not ek.get("delta"):
            continue
        num = kprod(kind, ek["c"], c, h)
        den = 0.0
        dnum = kprod_grad(kind, ek["c"], c, h, grp.d) if with_grad else None
        dden = [0.0] * grp.d
        for sj in grp.subj:
            if sj["u"] >= ek["u"]:
                den += kprod(kind, sj["c"], c, h)
                if with_grad:
                    gj = kprod_grad(kind, sj["c"], c, h, grp.d)
                    for k in range(grp.d):
                        dden[k] += gj[k]
        if den < np.finfo(float).tiny:
            continue
        J = num / den
        gJ = [(dnum[k] * den - num * dden[k]) / (den * den) for k in range(grp.d)] if with_grad else None
        out.append((ek["u"], J, gJ))
    return out


def cum_hazard(grp, c, bw, t):
    return sum(J for (u, J, _) in jumps(grp, c, bw) if u <= t)


def cum_hazard_grad(grp, c, bw, t):
    g = [0.0] * grp.d
    for u, _, gJ in jumps(grp, c, bw, True):
        if u <= t:
            for k in range(grp.d):
                g[k] += gJ[k]
    return g


def hazard(grp, c, bw, t):
    kind, b = bw.kernel.value, bw.b
    return sum(k1(kind, (u - t) / b) / b * J for (u, J, _) in jumps(grp, c, bw))


def hazard_grad(grp, c, bw, t):
    kind, b = bw.kernel.value, bw.b
    g = [0.0] * grp.d
    for u, _, gJ in jumps(grp, c, bw, True):
        kt = k1(kind, (u - t) / b) / b
        for k in range(grp.d):
            g[k] += kt * gJ[k]
    return g


def _pieces(grp, c, bw, t, horizon, with_grad):
    """Constant pieces of the path on [t, horizon]: (length, L(s) - L(t), grad difference)."""
    js = sorted(jumps(grp, c, bw, with_grad), key=lambda e: e[0])
    lt = sum(J for (u, J, _) in js if u <= t)
    glt = [sum(gJ[k] for (u, _, gJ) in js if u <= t) for k in range(grp.d)] if with_grad else None
    breaks = sorted({u for (u, _, _) in js if t < u < horizon})
    edges = [t] + breaks + [horizon]
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        L = sum(J for (u, J, _) in js if u <= a)
        G = [sum(gJ[k] for (u, _, gJ) in js if u <= a) - glt[k] for k in range(grp.d)] if with_grad else None
        out.append((b - a, L - lt, G))
    return out


def mrl(grp, c, bw, t, horizon):
    return sum(length * math.exp(-dl) for length, dl, _ in _pieces(grp, c, bw, t, horizon, False))


def mrl_grad(grp, c, bw, t, horizon):
    """d m / d v: the integrand's derivative is -(L2(s) - L2(t)) exp(-(L(s) - L(t)))."""
    g = [0.0] * grp.d
    for length, dl, G in _pieces(grp, c, bw, t, horizon, True):
        for k in range(grp.d):
            g[k] -= length * G[k] * math.exp(-dl)
    return g


def at_risk_terms(grp, bw, i, t):
    """(den, num_l) of the kernel-weighted at-risk fraction and covariate mean for subject i."""
    kind = bw.kernel.value
    me = next(s for s in grp.subj if s["i"] == i)
    clock = t - (me["w"] if grp.transplant else 0.0)
    den = 0.0
    tot = 0.0
    L = len(me["x"]) - grp.d
    num = [0.0] * L
    for sj in grp.subj:
        K = kprod(kind, sj["c"], me["c"], bw.h)
        tot += K
        if sj["u"] >= clock:
            den += K
            for l in range(L):
                num[l] += K * sj["x"][grp.d + l]
    return tot, den, num


def score(data, beta, bws, weight="efficient", n=None):
    """(1/n) sum_i delta_i g_i kron (x_l - ratio_i) with the weight written in MRL form.

    ``weight`` is "efficient" (m12/(m1+1) - m2/m), "simple" (rate_grad / rate)
    or a callable (t, v, group_transplant, w) -> list of length d.
    """
    n = data.n
    d = beta.d
    L = data.p - d
    total = [0.0] * (d * L)
    for transplant in (False, True):
        grp = Group(data, beta, transplant)
        if not grp.subj or not any(s["delta"] for s in grp.subj):
            continue
        bw = bws.for_group(transplant)
        kind = bw.kernel.value
        for s in grp.subj:
            if not s["delta"]:
                continue
            t_clock = s["u"]
            horizon = grp.tau - (s["w"] if transplant else 0.0)
            # ratio on the group clock, the subject's own time
            den = 0.0
            num = [0.0] * L
            for sj in grp.subj:
                if sj["u"] >= t_clock:
                    K = kprod(kind, sj["c"], s["c"], bw.h)
                    den += K
                    for l in range(L):
                        num[l] += K * sj["x"][d + l]
            if not den > TRIM:
                continue
            if callable(weight):
                g = list(weight(t_clock, s["v"], transplant, s["w"]))
            else:
                lam = hazard(grp, s["c"], bw, t_clock)
                if lam <= RATE_FLOOR:
                    continue
                lam2 = hazard_grad(grp, s["c"], bw, t_clock)
                if weight == "simple":
                    g = [lam2[k] / lam for k in range(d)]
                else:
                    if not horizon - t_clock > TRIM:
                        continue
                    m = mrl(grp, s["c"], bw, t_clock, horizon)
                    m2 = mrl_grad(grp, s["c"], bw, t_clock, horizon)
                    m1 = lam * m - 1
                    m12 = [lam2[k] * m + lam * m2[k] for k in range(d)]
                    g = [m12[k] / (m1 + 1) - m2[k] / m for k in range(d)]
            for k in range(d):
                for l in range(L):
                    total[k * L + l] += g[k] * (s["x"][d + l] - num[l] / den)
    return np.array(total) / n
