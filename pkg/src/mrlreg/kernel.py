"""Kernel functions, product kernels and default bandwidth rules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class KernelKind(str, enum.Enum):
    """Univariate kernel family. ``order`` is the kernel order nu."""

    GAUSS2 = "gauss2"
    GAUSS4 = "gauss4"

    @property
    def order(self) -> int:
        return 2 if self is KernelKind.GAUSS2 else 4

    @property
    def roughness(self) -> float:
        """Closed-form integral of K(u)**2 over the real line."""
        if self is KernelKind.GAUSS2:
            return 1.0 / (2.0 * math.sqrt(math.pi))
        return 27.0 / (32.0 * math.sqrt(math.pi))


def kernel_eval(kind: KernelKind, u):
    """Evaluate the kernel at ``u`` (scalar or array)."""
    u = np.asarray(u, dtype=float)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    if kind is KernelKind.GAUSS2:
        out = phi
    else:
        out = 0.5 * (3.0 - u * u) * phi
    return out if out.ndim else float(out)


def kernel_deriv(kind: KernelKind, u):
    """Derivative dK/du."""
    u = np.asarray(u, dtype=float)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    if kind is KernelKind.GAUSS2:
        out = -u * phi
    else:
        out = -0.5 * u * (5.0 - u * u) * phi
    return out if out.ndim else float(out)


def product_kernel(kind: KernelKind, u, h):
    """prod_k K(u_k / h_k) / h_k over the last axis of ``u``."""
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    if u.shape[-1:] != h.shape:
        raise ValueError(f"dimension mismatch: u has {u.shape[-1:]} coordinates, h has {h.shape}")
    out = np.prod(kernel_eval(kind, u / h) / h, axis=-1)
    return out if np.ndim(out) else float(out)


def product_kernel_grad(kind: KernelKind, u, h):
    """Gradient of :func:`product_kernel` with respect to ``u``.

    Returns an array with the same shape as ``u``.
    """
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    a = u / h
    kv = kernel_eval(kind, a) / h
    kd = kernel_deriv(kind, a) / (h * h)
    q = u.shape[-1]
    grads = []
    for k in range(q):
        others = np.prod(np.delete(kv, k, axis=-1), axis=-1) if q > 1 else 1.0
        grads.append(kd[..., k] * others)
    return np.stack(grads, axis=-1)


@dataclass(frozen=True)
class BandwidthConfig:
    """Bandwidths for one group smoother.

    ``h`` holds one entry per smoothing coordinate: the d index directions,
    followed by the transplant time for the transplant-group smoother.
    ``b`` is the bandwidth of the time kernel used by the hazard estimate.
    """

    h: tuple
    b: float
    kernel: KernelKind = KernelKind.GAUSS2

    def __post_init__(self):
        h = tuple(float(x) for x in np.atleast_1d(self.h))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "kernel", KernelKind(self.kernel))
        vals = np.array(h + (self.b,))
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"bandwidths must be positive and finite, got h={h}, b={self.b}")

    @property
    def h_total(self) -> float:
        return float(np.prod(self.h))


@dataclass(frozen=True)
class Bandwidths:
    """The pair of smoother bandwidths used by an estimate."""

    nontransplant: BandwidthConfig
    transplant: BandwidthConfig | None

    def for_group(self, transplant: bool) -> BandwidthConfig:
        bw = self.transplant if transplant else self.nontransplant
        if bw is None:
            raise ValueError("no bandwidths configured for the transplant group")
        return bw


# (index exponent, time exponent) per kernel order
RATE_EXPONENTS = {KernelKind.GAUSS2: (0.26, 0.2), KernelKind.GAUSS4: (0.15, 0.2)}


def default_kernel(d: int) -> KernelKind:
    return KernelKind.GAUSS2 if d == 1 else KernelKind.GAUSS4


def rule_of_thumb(sd: float, n: int, exponent: float) -> float:
    return float(sd) * float(n) ** (-exponent)


def _sd(values, what: str) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError(f"degenerate {what}: fewer than two values")
    sd = float(np.std(values, ddof=1))
    if not np.isfinite(sd) or sd <= 0:
        raise ValueError(f"degenerate {what}")
    return sd


def default_bandwidths(data, beta, kernel: KernelKind | None = None) -> Bandwidths:
    """Rule-of-thumb bandwidths at the index matrix ``beta``.

    Each index direction gets ``sd_k * n**-a`` and the time direction gets
    ``sd(event times) * n**-c`` where (a, c) = (0.26, 0.2) for the
    second-order kernel and (0.15, 0.2) for the fourth-order kernel.
    The time bandwidth of the transplant smoother uses elapsed times since
    transplant, and its extra coordinate uses the spread of observed
    transplant times.
    """
    from .domain import index_values

    n = data.n
    if n < 2:
        raise ValueError("need n >= 2 for bandwidth selection")
    kernel = default_kernel(beta.d) if kernel is None else KernelKind(kernel)
    a, c = RATE_EXPONENTS[kernel]
    v = index_values(beta, data)
    h_idx = []
    for k in range(beta.d):
        h_idx.append(rule_of_thumb(_sd(v[:, k], f"index direction {k + 1}"), n, a))

    tr = data.transplanted
    ev = data.delta.astype(bool)
    z = data.z
    t_events_n = z[ev & ~tr]
    if t_events_n.size < 2:
        t_events_n = z[ev]
    non = BandwidthConfig(h=tuple(h_idx), b=rule_of_thumb(_sd(t_events_n, "event times"), n, c), kernel=kernel)

    trans = None
    if tr.sum() >= 2:
        w = data.w_filled[tr]
        elapsed = (z - data.w_filled)[tr & ev]
        if elapsed.size < 2:
            elapsed = (z - data.w_filled)[tr]
        h_w = rule_of_thumb(_sd(w, "transplant times"), n, a)
        trans = BandwidthConfig(
            h=tuple(h_idx) + (h_w,),
            b=rule_of_thumb(_sd(elapsed, "elapsed event times"), n, c),
            kernel=kernel,
        )
    return Bandwidths(non, trans)
