"""Estimating equations for the index matrix, the root solver and variance estimates."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import optimize

from .domain import Dataset, GroupLabel, IndexMatrix, index_values
from ._engine import group_terms
from .kernel import Bandwidths, BandwidthConfig, KernelKind, default_bandwidths, kernel_eval
from .smoother import RATE_FLOOR, TRIM, GroupSmoother, HazardPaths, _kernel_terms, group_sample

log = logging.getLogger(__name__)

JAC_STEP = 1e-5
MAX_HALVINGS = 12
# roots where subjects mostly smooth against themselves are rejected
DEGENERATE_SHARE = 0.9


class EstimationError(RuntimeError):
    pass


class NonConvergenceError(EstimationError):
    def __init__(self, residual: float, beta: IndexMatrix):
        super().__init__(f"no start converged; best residual {residual:.3g}")
        self.residual = residual
        self.beta = beta


class SingularMatrixError(EstimationError):
    def __init__(self, what: str, cond: float):
        super().__init__(f"{what} is singular (condition number {cond:.3g})")
        self.cond = cond


# A caller-supplied weight receives (times, index values, group, w) for a batch
# of subjects of one group and returns an array of shape (batch, d).
WeightFn = Callable[[np.ndarray, np.ndarray, GroupLabel, Optional[np.ndarray]], np.ndarray]


@dataclass(frozen=True)
class ScoreSmoothing:
    """How the two smoothed pieces of the score are tuned relative to the smoother bandwidths.

    ``weight_bw_scale`` multiplies the index bandwidths of the estimated weight
    (hazard and its index-gradient) and ``weight_kernel`` picks its kernel.
    ``ratio_bw_scale`` and ``ratio_kernel`` set the bandwidths and kernel of
    the at-risk covariate mean. A ``None`` kernel keeps the smoother's kernel.
    The defaults reproduce the plain estimator.
    """

    weight_bw_scale: float = 1.0
    ratio_bw_scale: float = 1.0
    ratio_kernel: Optional[KernelKind] = None
    weight_kernel: Optional[KernelKind] = None

    def __post_init__(self):
        for name in ("weight_bw_scale", "ratio_bw_scale"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        for name in ("ratio_kernel", "weight_kernel"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, KernelKind(getattr(self, name)))


PLAIN = ScoreSmoothing()
# Wider weight, bias-reducing covariate mean; see FitConfig.
# A second-order weight kernel keeps the hazard in the denominator positive.
FIT_DEFAULT = ScoreSmoothing(weight_bw_scale=2.5, ratio_bw_scale=1.0, ratio_kernel=KernelKind.GAUSS4,
                             weight_kernel=KernelKind.GAUSS2)


def _kind_code(kind: KernelKind) -> int:
    return 0 if kind is KernelKind.GAUSS2 else 1


class _GroupScore:
    """beta-independent pieces of one group's contribution to the score."""

    def __init__(self, data: Dataset, transplant: bool, bw: BandwidthConfig, smoothing: ScoreSmoothing = PLAIN):
        gs = group_sample(data, transplant)
        self.gs = gs
        self.bw = bw
        self.h_weight = np.asarray(bw.h) * smoothing.weight_bw_scale
        self.h_ratio = np.asarray(bw.h) * smoothing.ratio_bw_scale
        self.ratio_kernel = smoothing.ratio_kernel or bw.kernel
        self.weight_kernel = smoothing.weight_kernel or bw.kernel
        self.label = GroupLabel.TRANSPLANT if transplant else GroupLabel.NONTRANSPLANT
        ev = gs.ev
        self.t = gs.u[ev]
        self.horizon = data.tau - (gs.w[ev] if transplant else 0.0)
        self._tk = None

    @property
    def at_risk(self):
        return np.arange(self.gs.m)[None, :] >= self.gs.first[self.gs.ev][:, None]

    def _time_kernel(self):
        if self._tk is None:
            b = self.bw.b
            self._tk = np.ascontiguousarray(kernel_eval(self.weight_kernel, (self.t[None, :] - self.t[:, None]) / b) / b)
        return self._tk

    def self_share(self, beta: IndexMatrix) -> np.ndarray:
        """Each event subject's own share of its at-risk kernel mass in the covariate mean."""
        gs = self.gs
        if gs.ev.size == 0:
            return np.zeros(0)
        cj = gs.coords(beta)
        K, _ = _kernel_terms(self.ratio_kernel, self.h_ratio, cj, cj[gs.ev], beta.d, False)
        den = np.where(self.at_risk, K, 0.0).sum(axis=1)
        own = K[np.arange(gs.ev.size), gs.ev]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > TRIM, own / den, 1.0)

    def contributions(self, beta: IndexMatrix, weight):
        """(psi rows, subject rows, skipped subjects, trimmed jumps) for this group."""
        gs = self.gs
        ev = gs.ev
        d = beta.d
        if ev.size == 0:
            return np.zeros((0, beta.n_free)), ev, 0, 0
        cj = np.ascontiguousarray(gs.coords(beta))
        xl = np.ascontiguousarray(gs.x[:, d:])
        if callable(weight):
            return self._contributions_generic(beta, weight, cj, xl)
        if weight not in ("efficient", "simple"):
            raise ValueError(f"unknown weight {weight!r}")
        rate, grad, ratio, den, trimmed = group_terms(
            cj, gs.first, ev, xl, self.h_weight, self.h_ratio, d,
            _kind_code(self.weight_kernel), _kind_code(self.ratio_kernel), self._time_kernel())
        ok = (den > TRIM) & (rate > RATE_FLOOR)
        if weight == "efficient":
            # the MRL-derivative weight reduces to rate_grad / rate wherever the
            # MRL itself is positive, i.e. strictly before the horizon
            ok &= (self.horizon - self.t) > TRIM
        with np.errstate(divide="ignore", invalid="ignore"):
            g = grad / rate[:, None]
        ok &= np.all(np.isfinite(g), axis=1)
        g = np.where(ok[:, None], g, 0.0)
        diff = np.where(ok[:, None], gs.x[ev, d:] - ratio, 0.0)
        psi = np.einsum("rk,rl->rkl", g, diff).reshape(ev.size, -1)
        return psi, gs.rows[ev], int((~ok).sum()), int(trimmed)

    def _contributions_generic(self, beta, weight, cj, xl):
        gs = self.gs
        ev = gs.ev
        d = beta.d
        bw = BandwidthConfig(tuple(self.h_ratio), self.bw.b, self.ratio_kernel)
        paths = HazardPaths(gs, bw, beta, cj[ev], need_grad=False)
        Km = np.where(self.at_risk, paths.K, 0.0)
        den = Km.sum(axis=1)
        ok = den > TRIM
        ratio = (Km @ xl) / np.where(ok, den, 1.0)[:, None]
        w = gs.w[ev] if gs.w is not None else None
        g = np.asarray(weight(self.t, cj[ev, :d], self.label, w), dtype=float).reshape(ev.size, d)
        ok &= np.all(np.isfinite(g), axis=1)
        g = np.where(ok[:, None], g, 0.0)
        diff = np.where(ok[:, None], gs.x[ev, d:] - ratio, 0.0)
        psi = np.einsum("rk,rl->rkl", g, diff).reshape(ev.size, -1)
        return psi, gs.rows[ev], int((~ok).sum()), paths.trimmed


class ScoreFunction:
    """Estimating function beta -> (1/n) sum_i psi_i(beta) on a fixed dataset.

    Bandwidths are held fixed unless ``refresh_bw`` is set, in which case the
    default rule is re-applied at every evaluation. ``smoothing`` tunes the
    weight and the covariate mean separately; see :class:`ScoreSmoothing`.
    """

    def __init__(self, data: Dataset, bw: Bandwidths, weight: Union[str, WeightFn] = "efficient",
                 refresh_bw: bool = False, kernel: KernelKind | None = None,
                 smoothing: ScoreSmoothing = PLAIN):
        self.data = data
        self.smoothing = smoothing
        self.weight = weight
        self.refresh_bw = refresh_bw
        self.kernel = kernel
        self.n_evals = 0
        self._set_bw(bw)

    def _set_bw(self, bw: Bandwidths):
        self.bw = bw
        self.groups = [_GroupScore(self.data, False, bw.nontransplant, self.smoothing)]
        if self.data.transplanted.any():
            self.groups.append(_GroupScore(self.data, True, bw.for_group(True), self.smoothing))

    def contributions(self, beta: IndexMatrix):
        """Per-subject contributions psi_i (n x P) plus (skipped subjects, trimmed jumps)."""
        if self.refresh_bw:
            self._set_bw(default_bandwidths(self.data, beta, self.kernel or self.bw.nontransplant.kernel))
        self.n_evals += 1
        n = self.data.n
        psi = np.zeros((n, beta.n_free))
        skipped = trimmed = 0
        for grp in self.groups:
            c, rows, s, t = grp.contributions(beta, self.weight)
            psi[rows] = c
            skipped += s
            trimmed += t
        if skipped >= int(self.data.delta.sum()):
            raise EstimationError("every score term was trimmed; estimation impossible")
        return psi, skipped, trimmed

    def self_share(self, beta: IndexMatrix) -> float:
        """Median own-weight share of the covariate means at ``beta``.

        Near 1 the kernel sees only the subject itself, every bracket
        collapses to zero and the score vanishes for a trivial reason.
        """
        return float(np.median(np.concatenate([g.self_share(beta) for g in self.groups])))

    def __call__(self, beta: IndexMatrix) -> np.ndarray:
        psi, _, _ = self.contributions(beta)
        return psi.sum(axis=0) / self.data.n


def _resolve_bw(data, beta, bw) -> Bandwidths:
    if bw is None or bw == "auto":
        return default_bandwidths(data, beta)
    return bw


def efficient_score(beta: IndexMatrix, data: Dataset, bw: Bandwidths | str = "auto") -> np.ndarray:
    """Mean efficient score, flattened column-major over the free block."""
    return ScoreFunction(data, _resolve_bw(data, beta, bw), "efficient")(beta)


def general_score(beta: IndexMatrix, data: Dataset, bw: Bandwidths | str = "auto",
                  g: Union[str, WeightFn] = "simple") -> np.ndarray:
    """Mean estimating function for a weight ``g``.

    ``g`` is ``"efficient"``, ``"simple"`` (ratio of the hazard index-gradient
    to the hazard) or a callable; see :data:`WeightFn`.
    """
    return ScoreFunction(data, _resolve_bw(data, beta, bw), g)(beta)


def numerical_jacobian(f, theta: np.ndarray, step: float = JAC_STEP) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        cols.append((f(theta + e) - f(theta - e)) / (2 * step))
    return np.column_stack(cols)


# ----------------------------------------------------------------------------
# initial values


def sir_init(data: Dataset, d: int, n_slices: int = 8) -> IndexMatrix:
    """Sliced inverse regression start, slicing observed time within (group, event) strata."""
    x = data.x
    xc = x - x.mean(axis=0)
    cov = np.cov(xc, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 1e-12, None)
    root_inv = evecs @ np.diag(evals**-0.5) @ evecs.T
    zx = xc @ root_inv
    M = np.zeros((data.p, data.p))
    strata = data.transplanted.astype(int) * 2 + data.delta.astype(int)
    for s in np.unique(strata):
        idx = np.flatnonzero(strata == s)
        order = idx[np.argsort(data.z[idx], kind="stable")]
        for chunk in np.array_split(order, min(n_slices, max(1, order.size // 10))):
            if chunk.size:
                mu = zx[chunk].mean(axis=0)
                M += chunk.size / data.n * np.outer(mu, mu)
    _, vecs = np.linalg.eigh(M)
    dirs = root_inv @ vecs[:, ::-1][:, :d]
    try:
        return IndexMatrix.from_full(dirs)
    except ValueError:
        return IndexMatrix.zeros(data.p, d)


# ----------------------------------------------------------------------------
# solver


@dataclass
class FitConfig:
    d: int = 1
    init: Union[IndexMatrix, str, None] = "sir"
    tol: float = 1e-6
    max_iter: int = 200
    bw: Union[Bandwidths, str] = "auto"
    refresh_bw: bool = False
    kernel: Optional[KernelKind] = None
    n_starts: int = 5
    perturb_scale: float = 0.5
    seed: int = 0
    stop_at_first: bool = True
    weight: str = "efficient"
    sandwich: bool = True
    # The weight is estimated with wider index bandwidths: any weight keeps the
    # equation unbiased, and a smoother one lets a root exist near the truth.
    # The covariate mean uses a fourth-order kernel to cut its smoothing bias.
    smoothing: ScoreSmoothing = FIT_DEFAULT

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass
class FitResult:
    beta_hat: IndexMatrix
    cov_sandwich: np.ndarray
    cov_efficient: np.ndarray
    score_norm: float
    iterations: int
    trimmed_terms: int
    converged: bool = True
    bandwidths: Optional[Bandwidths] = None
    n_evals: int = 0
    start: int = 0
    columns: tuple = field(default_factory=tuple)

    @property
    def se_efficient(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_efficient), 0, None))

    @property
    def se_sandwich(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_sandwich), 0, None))

    def to_dict(self) -> dict:
        bw = self.bandwidths

        def bwd(c):
            return None if c is None else {"h": list(c.h), "b": c.b, "kernel": c.kernel.value}

        return {
            "d": self.beta_hat.d,
            "p": self.beta_hat.p,
            "beta": self.beta_hat.full.tolist(),
            "vecl": self.beta_hat.vecl().tolist(),
            "cov_sandwich": np.asarray(self.cov_sandwich).tolist(),
            "cov_efficient": np.asarray(self.cov_efficient).tolist(),
            "score_norm": self.score_norm,
            "iterations": self.iterations,
            "trimmed_terms": self.trimmed_terms,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "start": self.start,
            "columns": list(self.columns),
            "bandwidths": None if bw is None else {"nontransplant": bwd(bw.nontransplant), "transplant": bwd(bw.transplant)},
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, obj: dict) -> "FitResult":
        full = np.asarray(obj["beta"], dtype=float)
        d = int(obj["d"])
        bwo = obj.get("bandwidths")
        bw = None
        if bwo is not None:
            mk = lambda c: None if c is None else BandwidthConfig(tuple(c["h"]), c["b"], KernelKind(c["kernel"]))
            bw = Bandwidths(mk(bwo["nontransplant"]), mk(bwo["transplant"]))
        P = (full.shape[0] - d) * d
        return cls(
            beta_hat=IndexMatrix(d, full[d:]),
            cov_sandwich=np.asarray(obj["cov_sandwich"], dtype=float).reshape(P, P),
            cov_efficient=np.asarray(obj["cov_efficient"], dtype=float).reshape(P, P),
            score_norm=float(obj["score_norm"]),
            iterations=int(obj["iterations"]),
            trimmed_terms=int(obj["trimmed_terms"]),
            converged=bool(obj.get("converged", True)),
            bandwidths=bw,
            n_evals=int(obj.get("n_evals", 0)),
            start=int(obj.get("start", 0)),
            columns=tuple(obj.get("columns", ())),
        )

    @classmethod
    def from_json(cls, path) -> "FitResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _newton(f, theta0, tol, max_iter):
    """Damped quasi-Newton (Broyden) with central-difference Jacobian refreshes.

    Returns (theta, residual vector, iterations, converged).
    """
    theta = np.asarray(theta0, dtype=float).copy()
    F = f(theta)
    J = numerical_jacobian(f, theta)
    fresh = True
    it = 0
    while it < max_iter:
        norm = np.linalg.norm(F)
        if norm <= tol:
            return theta, F, it, True
        it += 1
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + lam * step
            Fc = f(cand)
            if np.all(np.isfinite(Fc)) and np.linalg.norm(Fc) < norm:
                accepted = True
                break
            lam *= 0.5
        if accepted:
            s = cand - theta
            J = J + np.outer(Fc - F - J @ s, s) / (s @ s)
            theta, F = cand, Fc
            fresh = False
        elif not fresh:
            J = numerical_jacobian(f, theta)
            fresh = True
        else:
            break
    return theta, F, it, bool(np.linalg.norm(F) <= tol)


def _hybrid(f, theta0, tol, max_iter):
    """Powell's hybrid method (trust-region quasi-Newton) with our central-difference Jacobian."""
    theta0 = np.asarray(theta0, dtype=float)
    res = optimize.root(f, theta0, method="hybr", jac=lambda th: numerical_jacobian(f, th),
                        options={"xtol": 1e-12, "factor": 1.0, "maxfev": max_iter * (2 * theta0.size + 1)})
    F = np.asarray(res.fun, dtype=float)
    return res.x, F, int(res.get("nfev", 0)), bool(np.linalg.norm(F) <= tol)


def _solve_from(f, theta0, tol, max_iter):
    theta, F, it, ok = _hybrid(f, theta0, tol, max_iter)
    if ok:
        return theta, F, it, ok
    theta1, F1, it1, ok = _newton(f, theta0, tol, max_iter)
    it += it1
    if ok or np.linalg.norm(F1) < np.linalg.norm(F):
        theta, F = theta1, F1
    if ok:
        return theta, F, it, ok
    # stagnation: minimize the squared residual without derivatives, then polish
    res = optimize.minimize(lambda th: float(np.sum(f(th) ** 2)), theta, method="Nelder-Mead",
                            options={"maxiter": 100 * theta.size, "xatol": 1e-8, "fatol": tol * tol})
    theta2, F2, it2, ok2 = _newton(f, res.x, tol, max(1, max_iter - it))
    if np.linalg.norm(F2) < np.linalg.norm(F):
        return theta2, F2, it + it2, ok2
    return theta, F, it + it2, ok


def initial_beta(data: Dataset, cfg: FitConfig) -> IndexMatrix:
    if isinstance(cfg.init, IndexMatrix):
        if cfg.init.d != cfg.d or cfg.init.p != data.p:
            raise ValueError("initial index matrix has the wrong shape")
        return cfg.init
    if cfg.init in (None, "zeros"):
        return IndexMatrix.zeros(data.p, cfg.d)
    if cfg.init == "sir":
        return sir_init(data, cfg.d)
    raise ValueError(f"unknown init {cfg.init!r}")


def solve_beta(data: Dataset, cfg: FitConfig) -> FitResult:
    """Estimate the index matrix by solving the estimating equation.

    Starts from ``cfg.init`` and, if needed, from random perturbations of it;
    the start with the smallest residual wins. With ``stop_at_first`` the
    remaining starts are skipped once one converges.
    """
    p, d = data.p, cfg.d
    if not 1 <= d <= p:
        raise ValueError(f"need 1 <= d <= p, got d={d}, p={p}")
    init = initial_beta(data, cfg)
    bw = _resolve_bw(data, init, cfg.bw)
    if d == p:
        return FitResult(init, np.zeros((0, 0)), np.zeros((0, 0)), 0.0, 0, 0, True, bw, columns=data.columns)

    sf = ScoreFunction(data, bw, cfg.weight, refresh_bw=cfg.refresh_bw, kernel=cfg.kernel,
                       smoothing=cfg.smoothing)
    f = lambda th: sf(IndexMatrix.from_vecl(th, p, d))
    rng = np.random.default_rng(cfg.seed)
    theta0 = init.vecl()
    starts = [theta0] + [theta0 + cfg.perturb_scale * rng.standard_normal(theta0.size)
                         for _ in range(cfg.n_starts - 1)]
    best = None
    for k, th in enumerate(starts):
        try:
            theta, F, it, ok = _solve_from(f, th, cfg.tol, cfg.max_iter)
        except (EstimationError, np.linalg.LinAlgError) as exc:
            log.debug("start %d failed: %s", k, exc)
            continue
        norm = float(np.linalg.norm(F))
        log.debug("start %d: residual %.3g after %d iterations", k, norm, it)
        if ok and sf.self_share(IndexMatrix.from_vecl(theta, p, d)) > DEGENERATE_SHARE:
            log.debug("start %d: root is degenerate (kernels see only their own subject)", k)
            continue
        if best is None or norm < best[1]:
            best = (theta, norm, it, ok, k)
        if ok and cfg.stop_at_first:
            break
    if best is None:
        raise NonConvergenceError(float("inf"), init)
    theta, norm, it, ok, k = best
    beta_hat = IndexMatrix.from_vecl(theta, p, d)
    if not ok:
        raise NonConvergenceError(norm, beta_hat)

    bw_final = sf.bw
    psi, skipped, trimmed = sf.contributions(beta_hat)
    P = beta_hat.n_free
    cov_s = np.full((P, P), np.nan)
    cov_e = _efficient_cov_from(data, beta_hat, bw_final)
    if cfg.sandwich:
        cov_s = covariance_sandwich(beta_hat, data, bw_final, weight=cfg.weight,
                                    smoothing=cfg.smoothing)
    return FitResult(beta_hat, cov_s, cov_e, norm, it, skipped + trimmed, True, bw_final,
                     n_evals=sf.n_evals, start=k, columns=data.columns)


# ----------------------------------------------------------------------------
# variance estimates


def _sym(a):
    return 0.5 * (a + a.T)


def covariance_sandwich(beta_hat: IndexMatrix, data: Dataset, bw: Bandwidths | str = "auto",
                        weight: Union[str, WeightFn] = "efficient",
                        smoothing: ScoreSmoothing = PLAIN) -> np.ndarray:
    """A^-1 B A^-T / n with A the Jacobian of the mean score and B its second moment.

    ``smoothing`` must match the one used to solve for ``beta_hat`` so that
    A and B describe the same estimating function.
    """
    bw = _resolve_bw(data, beta_hat, bw)
    sf = ScoreFunction(data, bw, weight, smoothing=smoothing)
    p, d = data.p, beta_hat.d
    A = numerical_jacobian(lambda th: sf(IndexMatrix.from_vecl(th, p, d)), beta_hat.vecl())
    psi, _, _ = sf.contributions(beta_hat)
    B = psi.T @ psi / data.n
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrixError("score Jacobian", cond)
    Ainv = np.linalg.inv(A)
    return _sym(Ainv @ B @ Ainv.T / data.n)


def _efficient_cov_from(data, beta_hat, bw):
    psi, _, _ = ScoreFunction(data, bw, "simple").contributions(beta_hat)
    S = psi.T @ psi / data.n
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrixError("efficient information", cond)
    return _sym(np.linalg.inv(S) / data.n)


def efficient_information(beta_hat: IndexMatrix, data: Dataset, bw: Bandwidths | str = "auto") -> np.ndarray:
    """(1/n) sum_i delta_i (g_i kron [x_l - E-hat ratio])^2 with g = rate gradient / rate."""
    bw = _resolve_bw(data, beta_hat, bw)
    psi, _, _ = ScoreFunction(data, bw, "simple").contributions(beta_hat)
    return psi.T @ psi / data.n


def covariance_efficient(beta_hat: IndexMatrix, data: Dataset, bw: Bandwidths | str = "auto") -> np.ndarray:
    return _efficient_cov_from(data, beta_hat, _resolve_bw(data, beta_hat, bw))


def mrl_variance(group, t, v, w, beta_hat: IndexMatrix, data: Dataset, bw: Bandwidths) -> float:
    """Plug-in variance of the estimated mean residual life at (t, v[, w]).

    Evaluates the ordered-event-time sum over the group's distinct event
    times and divides by n times the product of the smoothing bandwidths.
    """
    sm = GroupSmoother(data, group, beta_hat, bw)
    sm._check_domain(t, w)
    tt = sm._clock(t, w)
    paths = sm.paths(v, w, need_grad=False)
    step = paths.step_hazard(0, sm.horizon(w))
    times = step.times
    if times.size == 0:
        return 0.0
    L = np.concatenate([[0.0], np.cumsum(step.jumps)])  # L[i] = Lambda(t_(i))
    tprev = np.concatenate([[0.0], times[:-1]])  # t_(i-1) for i = 1..K
    dL = step.jumps
    gs = sm.gs
    Kw = paths.K[0]
    n = data.n
    # (1/n) sum_j Y_j(t_(i-1)) K_h(c_j - c)
    at_risk = gs.u[None, :] >= tprev[:, None]
    den = (at_risk * Kw[None, :]).sum(axis=1) / n
    e_prev = np.exp(-L[:-1])  # exp(-Lambda(t_(j-1)))

    def tail_from(a):
        keep = times > a
        return np.sum(keep * e_prev * (times - np.maximum(a, tprev)))

    head = tail_from(tt)
    total = 0.0
    for i in range(times.size):
        lo = tprev[i]
        keep = times > max(tt, lo)
        second = np.sum(keep * e_prev * (times - np.maximum(lo, tprev)))
        bracket = (head if lo < tt else 0.0) + second
        if den[i] > TRIM / n:
            total += dL[i] / den[i] * bracket**2
    lt = float(step(tt))
    q = len(sm.bw.h)
    sigma2 = np.exp(2 * lt) * sm.bw.kernel.roughness**q * total
    return float(sigma2 / (n * sm.bw.h_total))


def improvement(t: float, x, w: float, fit: FitResult, data: Dataset, bw: Bandwidths | None = None):
    """Gain in mean residual life at time t from a transplant received at w.

    Returns (difference, standard error); the two group estimates use disjoint
    subjects and are treated as independent.
    """
    if not (w < t < data.tau):
        raise ValueError(f"need w < t < tau, got w={w}, t={t}, tau={data.tau}")
    bw = bw or fit.bandwidths or default_bandwidths(data, fit.beta_hat)
    beta = fit.beta_hat
    v = index_values(beta, np.atleast_2d(np.asarray(x, dtype=float)))[0]
    m_t = GroupSmoother(data, GroupLabel.TRANSPLANT, beta, bw).mrl(t, v, w)
    m_n = GroupSmoother(data, GroupLabel.NONTRANSPLANT, beta, bw).mrl(t, v)
    var = mrl_variance(GroupLabel.TRANSPLANT, t, v, w, beta, data, bw) + \
        mrl_variance(GroupLabel.NONTRANSPLANT, t, v, None, beta, data, bw)
    return m_t - m_n, float(np.sqrt(var))
