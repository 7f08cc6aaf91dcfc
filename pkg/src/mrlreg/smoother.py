"""Kernel-smoothed hazard and mean-residual-life estimators.

Each transplant group is smoothed separately. Non-transplant subjects are
indexed by (beta^T x) on the calendar clock; transplant subjects are indexed
by (beta^T x, w) on the elapsed clock ``z - w``.

Public functions take calendar time ``t``; for the transplant group the
elapsed time ``t - w`` is formed internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Dataset, GroupLabel, IndexMatrix, index_values
from .kernel import Bandwidths, BandwidthConfig, KernelKind, kernel_deriv, kernel_eval

TRIM = 1e-10
RATE_FLOOR = 1e-12
# jump denominators are dropped only when they underflow; a fixed cutoff here
# switches O(1) jumps on and off and makes the score discontinuous in beta
JUMP_TRIM = np.finfo(float).tiny


class TrimmedCellError(ValueError):
    """A kernel denominator vanished at the requested evaluation point."""

    def __init__(self, t, i, msg="kernel denominator below trim threshold"):
        super().__init__(f"{msg} (t={t}, subject={i})")
        self.t = t
        self.i = i


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class StepHazard:
    """Piecewise-constant cumulative hazard: right-continuous, zero at the origin."""

    times: np.ndarray
    jumps: np.ndarray
    tau: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        jumps = np.asarray(self.jumps, dtype=float)
        if times.shape != jumps.shape:
            raise ValueError("times and jumps must have equal length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] < 0):
            raise ValueError("jump times must be strictly increasing and nonnegative")
        if np.any(jumps < 0):
            raise ValueError("jumps must be nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "jumps", jumps)

    def __call__(self, t):
        cum = np.concatenate([[0.0], np.cumsum(self.jumps)])
        return cum[np.searchsorted(self.times, t, side="right")]

    def mrl(self, t: float) -> float:
        """exp(L(t)) * integral_t^tau exp(-L(s)) ds, integrated exactly."""
        if t > self.tau:
            raise DomainError(f"t={t} beyond horizon {self.tau}")
        edges = np.concatenate([[0.0], self.times, [np.inf]])
        cum = np.concatenate([[0.0], np.cumsum(self.jumps)])
        lt = self(t)
        lo = np.maximum(edges[:-1], t)
        hi = np.minimum(edges[1:], self.tau)
        length = np.clip(hi - lo, 0.0, None)
        keep = length > 0
        return float(np.sum(np.exp(-(cum[keep] - lt)) * length[keep]))


@dataclass
class GroupSample:
    """Subjects of one transplant group, sorted by (group clock, input order)."""

    transplant: bool
    rows: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    w: np.ndarray | None
    first: np.ndarray
    ev: np.ndarray

    @property
    def m(self) -> int:
        return self.u.size

    @property
    def u_ev(self) -> np.ndarray:
        return self.u[self.ev]

    def coords(self, beta: IndexMatrix) -> np.ndarray:
        v = index_values(beta, self.x)
        if self.transplant:
            return np.column_stack([v, self.w])
        return v


def group_sample(data: Dataset, transplant: bool) -> GroupSample:
    mask = data.transplanted if transplant else ~data.transplanted
    rows = np.flatnonzero(mask)
    u = data.z[rows] - (data.w_filled[rows] if transplant else 0.0)
    order = np.lexsort((rows, u))
    rows, u = rows[order], u[order]
    first = np.searchsorted(u, u, side="left")
    delta = data.delta[rows]
    return GroupSample(
        transplant=transplant,
        rows=rows,
        u=u,
        delta=delta,
        x=data.x[rows],
        w=data.w_filled[rows] if transplant else None,
        first=first,
        ev=np.flatnonzero(delta),
    )


def _kernel_terms(kind: KernelKind, h, coords_j, coords_r, d: int, need_grad: bool):
    """Product kernel weights K_h(c_j - c_r) and their gradient in the eval index.

    Returns ``K`` of shape (r, m) and ``dK`` of shape (r, m, d) where ``dK`` is
    the derivative with respect to the first ``d`` coordinates of ``c_r``.
    """
    h = np.asarray(h, dtype=float)
    a = (coords_j[None, :, :] - coords_r[:, None, :]) / h
    kv = kernel_eval(kind, a) / h
    q = a.shape[-1]
    K = kv[..., 0] if q == 1 else np.prod(kv, axis=-1)
    if not need_grad:
        return K, None
    kd = kernel_deriv(kind, a[..., :d]) / (h[:d] * h[:d])
    if q == 1:
        dK = -kd
    else:
        dK = np.empty(K.shape + (d,))
        for k in range(d):
            others = np.prod(np.delete(kv, k, axis=-1), axis=-1)
            dK[..., k] = -kd[..., k] * others
    return K, dK


def _revcum(a, axis=1):
    return np.flip(np.cumsum(np.flip(a, axis=axis), axis=axis), axis=axis)


class HazardPaths:
    """Smoothed cumulative-hazard paths at a batch of evaluation coordinates.

    Row r of every array corresponds to evaluation coordinate r.
    """

    def __init__(self, gs: GroupSample, bw: BandwidthConfig, beta: IndexMatrix, coords_r, need_grad=True):
        self.gs = gs
        self.bw = bw
        self.d = beta.d
        coords_r = np.atleast_2d(np.asarray(coords_r, dtype=float))
        self.coords = coords_r
        cj = gs.coords(beta)
        K, dK = _kernel_terms(bw.kernel, bw.h, cj, coords_r, beta.d, need_grad)
        self.K, self.dK = K, dK
        fe = gs.first[gs.ev]
        R = _revcum(K)
        D = R[:, fe]
        small = D < JUMP_TRIM
        self.trimmed = int(small.sum())
        Kev = K[:, gs.ev]
        # skip jumps whose denominator vanished
        Dsafe = np.where(small, 1.0, D)
        J = np.where(small, 0.0, Kev / Dsafe)
        self.J = J
        self.Lpad = np.concatenate([np.zeros((J.shape[0], 1)), np.cumsum(J, axis=1)], axis=1)
        if need_grad:
            dR = _revcum(dK, axis=1)
            dD = dR[:, fe, :]
            dJ = (dK[:, gs.ev, :] - J[..., None] * dD) / Dsafe[..., None]
            dJ[small] = 0.0
            self.dJ = dJ
            self.Gpad = np.concatenate([np.zeros((J.shape[0], 1, self.d)), np.cumsum(dJ, axis=1)], axis=1)
        else:
            self.dJ = self.Gpad = None
        self.u_ev = gs.u_ev

    @property
    def r(self) -> int:
        return self.coords.shape[0]

    def _t(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(t, (self.r,)) if t.ndim == 0 else t

    def _pos(self, t):
        return np.searchsorted(self.u_ev, t, side="right")

    def cum(self, t):
        t = self._t(t)
        return self.Lpad[np.arange(self.r), self._pos(t)]

    def cum_grad(self, t):
        t = self._t(t)
        return self.Gpad[np.arange(self.r), self._pos(t), :]

    def _time_kernel(self, t):
        b = self.bw.b
        return kernel_eval(self.bw.kernel, (self.u_ev[None, :] - t[:, None]) / b) / b

    def rate(self, t, tk=None):
        t = self._t(t)
        tk = self._time_kernel(t) if tk is None else tk
        return np.sum(tk * self.J, axis=1)

    def rate_grad(self, t, tk=None):
        t = self._t(t)
        tk = self._time_kernel(t) if tk is None else tk
        return np.einsum("rk,rkd->rd", tk, self.dJ)

    def interval_lengths(self, t, horizon):
        """Overlap of [t, horizon] with each constancy interval of the path."""
        t = self._t(t)
        horizon = np.broadcast_to(np.asarray(horizon, dtype=float), (self.r,))
        lo_e = np.concatenate([[0.0], self.u_ev])
        hi_e = np.concatenate([self.u_ev, [np.inf]])
        lo = np.maximum(lo_e[None, :], t[:, None])
        hi = np.minimum(hi_e[None, :], horizon[:, None])
        return np.clip(hi - lo, 0.0, None)

    def integrals(self, t, horizon, grad=True, length=None):
        """Exact integrals of exp(-(L(s) - L(t))) and L2(s) exp(-(L(s) - L(t))) over [t, horizon]."""
        t = self._t(t)
        lt = self.cum(t)
        length = self.interval_lengths(t, horizon) if length is None else length
        keep = length > 0
        expo = np.where(keep, lt[:, None] - self.Lpad, 0.0)
        # a fourth-order kernel can make the path decrease; far from the data
        # the exponent may then overflow and the integral is reported as inf
        with np.errstate(over="ignore", invalid="ignore"):
            wts = np.where(keep, np.exp(expo) * length, 0.0)
            i0 = wts.sum(axis=1)
            i1 = np.einsum("rk,rkd->rd", wts, self.Gpad) if grad else None
        return i0, i1

    def mrl(self, t, horizon):
        return self.integrals(t, horizon, grad=False)[0]

    def mrl_derivs(self, t, horizon, tk=None, length=None):
        """Return (m, m1, m2, m12, rate, rate_grad) at each row.

        ``rate`` is the raw smoothed hazard; the floored value enters m1 and m12.
        """
        t = self._t(t)
        m, i1 = self.integrals(t, horizon, length=length)
        tk = self._time_kernel(t) if tk is None else tk
        raw = self.rate(t, tk)
        lam = np.maximum(raw, RATE_FLOOR)
        lam2 = self.rate_grad(t, tk)
        m2 = self.cum_grad(t) * m[:, None] - i1
        m1 = lam * m - 1.0
        m12 = lam2 * m[:, None] + lam[:, None] * m2
        return m, m1, m2, m12, raw, lam2

    def step_hazard(self, row: int, horizon: float) -> StepHazard:
        """Collapse row ``row`` into a :class:`StepHazard` (tied jumps merged)."""
        times, inv = np.unique(self.u_ev, return_inverse=True)
        jumps = np.zeros(times.size)
        np.add.at(jumps, inv, self.J[row])
        keep = jumps > 0
        return StepHazard(times[keep], jumps[keep], horizon)


class GroupSmoother:
    """Estimators for one group at a fixed index matrix and bandwidth."""

    def __init__(self, data: Dataset, group: GroupLabel, beta: IndexMatrix, bw: Bandwidths | BandwidthConfig):
        self.data = data
        self.group = GroupLabel(group)
        self.transplant = self.group is GroupLabel.TRANSPLANT
        self.beta = beta
        if beta.p != data.p:
            raise ValueError(f"dimension mismatch: beta has p={beta.p}, data has p={data.p}")
        self.bw = bw.for_group(self.transplant) if isinstance(bw, Bandwidths) else bw
        self.gs = group_sample(data, self.transplant)
        expected = beta.d + (1 if self.transplant else 0)
        if len(self.bw.h) != expected:
            raise ValueError(f"{self.group.value} smoother needs {expected} bandwidths, got {len(self.bw.h)}")

    def _coords(self, v, w):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.size != self.beta.d:
            raise ValueError(f"index value must have length {self.beta.d}")
        if self.transplant:
            if w is None:
                raise ValueError("transplant group requires w")
            return np.append(v, float(w))[None, :]
        return v[None, :]

    def _clock(self, t, w):
        return t - float(w) if self.transplant else t

    def horizon(self, w=None) -> float:
        return self.data.tau - (float(w) if self.transplant else 0.0)

    def paths(self, v, w=None, need_grad=True) -> HazardPaths:
        return HazardPaths(self.gs, self.bw, self.beta, self._coords(v, w), need_grad)

    def cum_hazard(self, t, v, w=None) -> float:
        return float(self.paths(v, w, need_grad=False).cum(self._clock(t, w))[0])

    def cum_hazard_grad(self, t, v, w=None) -> np.ndarray:
        return self.paths(v, w).cum_grad(self._clock(t, w))[0]

    def hazard(self, t, v, w=None) -> float:
        return float(self.paths(v, w, need_grad=False).rate(self._clock(t, w))[0])

    def hazard_grad(self, t, v, w=None) -> np.ndarray:
        return self.paths(v, w).rate_grad(self._clock(t, w))[0]

    def step_hazard(self, v, w=None) -> StepHazard:
        return self.paths(v, w, need_grad=False).step_hazard(0, self.horizon(w))

    def _check_domain(self, t, w):
        if self.transplant and w is None:
            raise ValueError("transplant group requires w")
        if self.transplant and t < w:
            raise DomainError(f"t={t} precedes transplant time w={w}")
        if t > self.data.tau:
            raise DomainError(f"t={t} beyond horizon tau={self.data.tau}")

    def mrl(self, t, v, w=None) -> float:
        self._check_domain(t, w)
        p = self.paths(v, w, need_grad=False)
        return float(p.mrl(self._clock(t, w), self.horizon(w))[0])

    def mrl_derivs(self, t, v, w=None):
        """(m1, m2, m12) at a single point."""
        self._check_domain(t, w)
        p = self.paths(v, w)
        _, m1, m2, m12, _, _ = p.mrl_derivs(self._clock(t, w), self.horizon(w))
        return float(m1[0]), m2[0], m12[0]

    def _subject_pos(self, i: int) -> int:
        pos = np.flatnonzero(self.gs.rows == i)
        if pos.size == 0:
            raise ValueError(f"subject {i} is not in the {self.group.value} group")
        return int(pos[0])

    def _at_risk_terms(self, t, i):
        pos = self._subject_pos(i)
        cj = self.gs.coords(self.beta)
        K, _ = _kernel_terms(self.bw.kernel, self.bw.h, cj, cj[pos : pos + 1], self.beta.d, False)
        K = K[0]
        den = K.sum()
        if not den > TRIM:
            raise TrimmedCellError(t, i)
        at_risk = self.gs.u >= self._clock(t, self.gs.w[pos] if self.transplant else None)
        return K, den, at_risk

    def cond_at_risk(self, t, i: int) -> float:
        K, den, at_risk = self._at_risk_terms(t, i)
        return float(K[at_risk].sum() / den)

    def cond_at_risk_xl(self, t, i: int) -> np.ndarray:
        K, den, at_risk = self._at_risk_terms(t, i)
        xl = self.gs.x[:, self.beta.d :]
        return (K * at_risk) @ xl / den


def _group_of(data: Dataset, i: int) -> GroupLabel:
    return GroupLabel.TRANSPLANT if data.transplanted[i] else GroupLabel.NONTRANSPLANT


# -- functional wrappers --------------------------------------------------------


def cond_at_risk(t, i, beta, data, bw) -> float:
    """Kernel-weighted fraction of subject i's group still at risk at ``t``."""
    return GroupSmoother(data, _group_of(data, i), beta, bw).cond_at_risk(t, i)


def cond_at_risk_xl(t, i, beta, data, bw) -> np.ndarray:
    return GroupSmoother(data, _group_of(data, i), beta, bw).cond_at_risk_xl(t, i)


def cum_hazard(group, t, v, w, beta, data, bw) -> float:
    return GroupSmoother(data, group, beta, bw).cum_hazard(t, v, w)


def cum_hazard_path(group, v, w, beta, data, bw) -> StepHazard:
    return GroupSmoother(data, group, beta, bw).step_hazard(v, w)


def cum_hazard_grad(group, t, v, w, beta, data, bw) -> np.ndarray:
    return GroupSmoother(data, group, beta, bw).cum_hazard_grad(t, v, w)


def hazard(group, t, v, w, beta, data, bw) -> float:
    return GroupSmoother(data, group, beta, bw).hazard(t, v, w)


def hazard_grad(group, t, v, w, beta, data, bw) -> np.ndarray:
    return GroupSmoother(data, group, beta, bw).hazard_grad(t, v, w)


def mrl(group, t, v, w, beta, data, bw) -> float:
    return GroupSmoother(data, group, beta, bw).mrl(t, v, w)


def mrl_derivs(group, t, v, w, beta, data, bw):
    return GroupSmoother(data, group, beta, bw).mrl_derivs(t, v, w)
