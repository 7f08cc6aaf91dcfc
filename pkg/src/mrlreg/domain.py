"""Core data model: subjects, datasets, index matrices and CSV I/O."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or invalid survival data."""


class GroupLabel(str, enum.Enum):
    TRANSPLANT = "transplant"
    NONTRANSPLANT = "nontransplant"

    @classmethod
    def of(cls, w: Optional[float], t: float) -> "GroupLabel":
        """Transplant status at time ``t`` given the (possibly absent) transplant time."""
        if w is not None and w <= t:
            return cls.TRANSPLANT
        return cls.NONTRANSPLANT


@dataclass(frozen=True)
class Subject:
    x: tuple
    z: float
    delta: bool
    w: Optional[float] = None

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "delta", bool(self.delta))
        if not all(math.isfinite(v) for v in x):
            raise DataError("covariates must be finite")
        if not math.isfinite(self.z) or self.z < 0:
            raise DataError(f"observed time must be finite and nonnegative, got {self.z}")
        if self.w is not None:
            w = float(self.w)
            object.__setattr__(self, "w", w)
            if not math.isfinite(w) or w < 0:
                raise DataError(f"transplant time must be finite and nonnegative, got {w}")
            if w > self.z:
                raise DataError(f"transplant after observation end (w={w} > z={self.z})")

    @property
    def group(self) -> GroupLabel:
        return GroupLabel.of(self.w, self.z)


class Dataset:
    """Immutable collection of subjects sharing a covariate dimension.

    Parameters
    ----------
    x : (n, p) array
    z : (n,) observed times
    delta : (n,) event indicators
    w : sequence of transplant times, ``None`` where no transplant was observed
    tau : follow-up horizon; defaults to ``max(z)``
    columns : optional covariate names
    """

    def __init__(self, x, z, delta, w=None, tau: float | None = None, columns: Sequence[str] | None = None):
        x = np.array(x, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        z = np.array(z, dtype=float, copy=True).ravel()
        delta = np.array(delta, copy=True).ravel().astype(bool)
        n = z.size
        if x.shape[0] != n or delta.size != n:
            raise DataError("x, z and delta must have the same number of rows")
        if n < 2:
            raise DataError(f"need at least 2 subjects, got {n}")
        if w is None:
            w = [None] * n
        w = list(w)
        if len(w) != n:
            raise DataError("w must have one entry per subject")
        mask = np.array([wi is not None and not (isinstance(wi, float) and math.isnan(wi)) for wi in w])
        w_filled = np.array([float(wi) if m else 0.0 for wi, m in zip(w, mask)])

        bad = ~np.isfinite(x).all(axis=1) | ~np.isfinite(z) | ~np.isfinite(w_filled)
        if bad.any():
            raise DataError(f"non-finite value at row {int(np.flatnonzero(bad)[0])}")
        neg = (z < 0) | (mask & (w_filled < 0))
        if neg.any():
            raise DataError(f"negative time at row {int(np.flatnonzero(neg)[0])}")
        late = mask & (w_filled > z)
        if late.any():
            raise DataError(f"transplant after observation end at row {int(np.flatnonzero(late)[0])}")

        zmax = float(z.max())
        tau = zmax if tau is None else float(tau)
        if not tau >= zmax or not math.isfinite(tau):
            raise DataError(f"tau={tau} must be finite and >= max observed time {zmax}")

        for arr in (x, z, delta, w_filled, mask):
            arr.setflags(write=False)
        self._x, self._z, self._delta = x, z, delta
        self._w, self._mask = w_filled, mask
        self._tau = tau
        self._columns = tuple(columns) if columns is not None else tuple(f"x{k + 1}" for k in range(x.shape[1]))
        if len(self._columns) != x.shape[1]:
            raise DataError("one column name per covariate required")

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], tau: float | None = None, columns=None) -> "Dataset":
        if len(subjects) < 2:
            raise DataError(f"need at least 2 subjects, got {len(subjects)}")
        p = {len(s.x) for s in subjects}
        if len(p) != 1:
            raise DataError("all subjects must share the covariate dimension")
        return cls(
            np.array([s.x for s in subjects]),
            [s.z for s in subjects],
            [s.delta for s in subjects],
            [s.w for s in subjects],
            tau=tau,
            columns=columns,
        )

    n = property(lambda self: self._z.size)
    p = property(lambda self: self._x.shape[1])
    tau = property(lambda self: self._tau)
    x = property(lambda self: self._x)
    z = property(lambda self: self._z)
    delta = property(lambda self: self._delta)
    columns = property(lambda self: self._columns)

    @property
    def transplanted(self) -> np.ndarray:
        """Boolean mask of subjects observed to receive a transplant."""
        return self._mask

    @property
    def w_filled(self) -> np.ndarray:
        """Transplant times; entries outside :attr:`transplanted` carry no meaning."""
        return self._w

    @property
    def w(self) -> list:
        return [float(wi) if m else None for wi, m in zip(self._w, self._mask)]

    @cached_property
    def subjects(self) -> tuple:
        return tuple(
            Subject(tuple(xi), zi, di, wi) for xi, zi, di, wi in zip(self._x, self._z, self._delta, self.w)
        )

    def with_tau(self, tau: float) -> "Dataset":
        return Dataset(self._x, self._z, self._delta, self.w, tau=tau, columns=self._columns)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        w = self.w
        return Dataset(
            self._x[rows], self._z[rows], self._delta[rows], [w[i] for i in np.arange(self.n)[rows]],
            tau=self._tau, columns=self._columns,
        )

    def summary(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "tau": self.tau,
            "censoring_rate": float(1.0 - self._delta.mean()),
            "transplant_fraction": float(self._mask.mean()),
        }

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self._tau == other._tau
            and np.array_equal(self._x, other._x)
            and np.array_equal(self._z, other._z)
            and np.array_equal(self._delta, other._delta)
            and np.array_equal(self._mask, other._mask)
            and np.array_equal(self._w[self._mask], other._w[other._mask])
        )

    def __repr__(self):
        return f"Dataset(n={self.n}, p={self.p}, tau={self.tau:g})"


def relaxed_tau(data: Dataset, scale: float = 1.0) -> float:
    """Follow-up horizon for the relaxed (non-compact support) setting.

    ``scale`` multiplies the largest observed time; values above 1 extend
    integration beyond the last observation as the sample grows.
    """
    if scale < 1.0:
        raise ValueError("scale must be >= 1")
    return float(data.z.max()) * scale


@dataclass(frozen=True)
class IndexMatrix:
    """p x d index matrix with its top d x d block fixed to the identity."""

    d: int
    lower: np.ndarray = field(repr=False)

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float, copy=True)
        if lower.ndim == 1:
            lower = lower.reshape(-1, self.d, order="F") if lower.size else np.zeros((0, self.d))
        if lower.ndim != 2 or lower.shape[1] != self.d:
            raise ValueError(f"lower block must have {self.d} columns, got shape {lower.shape}")
        if not np.isfinite(lower).all():
            raise ValueError("lower block must be finite")
        lower.setflags(write=False)
        object.__setattr__(self, "lower", lower)

    @property
    def p(self) -> int:
        return self.d + self.lower.shape[0]

    @property
    def n_free(self) -> int:
        return self.lower.size

    @property
    def full(self) -> np.ndarray:
        return np.vstack([np.eye(self.d), self.lower])

    def vecl(self) -> np.ndarray:
        """Free parameters, column-major."""
        return self.lower.ravel(order="F").copy()

    @classmethod
    def from_vecl(cls, theta, p: int, d: int) -> "IndexMatrix":
        theta = np.asarray(theta, dtype=float)
        return cls(d, theta.reshape(p - d, d, order="F"))

    @classmethod
    def from_full(cls, beta) -> "IndexMatrix":
        """Normalize an arbitrary p x d matrix so its top block is the identity."""
        beta = np.atleast_2d(np.asarray(beta, dtype=float))
        if beta.shape[0] < beta.shape[1]:
            beta = beta.T
        d = beta.shape[1]
        top = beta[:d]
        if abs(np.linalg.det(top)) < 1e-12:
            raise ValueError("upper block is singular; cannot normalize")
        full = beta @ np.linalg.inv(top)
        return cls(d, full[d:])

    @classmethod
    def zeros(cls, p: int, d: int) -> "IndexMatrix":
        return cls(d, np.zeros((p - d, d)))

    def __eq__(self, other):
        return isinstance(other, IndexMatrix) and self.d == other.d and np.array_equal(self.lower, other.lower)

    def __hash__(self):
        return hash((self.d, self.lower.tobytes()))


def index_values(beta: IndexMatrix, data) -> np.ndarray:
    """Rows of beta^T x for each subject (or for a raw covariate array)."""
    x = data.x if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))
    if x.shape[1] != beta.p:
        raise ValueError(f"dimension mismatch: beta has p={beta.p}, data has p={x.shape[1]}")
    d = beta.d
    return x[:, :d] + x[:, d:] @ beta.lower


# ----------------------------------------------------------------------------
# CSV I/O

SRTR_COVARIATES = (
    "gender",
    "race",
    "max_cold_ischemia_time",
    "insurance",
    "bmi",
    "diagnosis_type",
    "peak_pra",
    "prior_malignancy",
    "diabetes",
)


@dataclass(frozen=True)
class Schema:
    """Column mapping for CSV files. ``covariates=None`` means every other column."""

    z: str = "z"
    delta: str = "delta"
    w: str = "w"
    covariates: Optional[tuple] = None


SRTR_SCHEMA = Schema(covariates=SRTR_COVARIATES)


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"unparseable value {text!r} in column {col!r} at row {row}") from None
    if not math.isfinite(val):
        raise DataError(f"non-finite value in column {col!r} at row {row}")
    return val


def load_dataset(path, schema: Schema = Schema(), tau: float | None = None) -> Dataset:
    """Read a CSV file into a validated :class:`Dataset`.

    Row indices in error messages are zero-based data rows (header excluded).
    An empty ``w`` cell means no transplant was observed.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (schema.z, schema.delta):
            if col not in header:
                raise DataError(f"missing column {col!r}")
        has_w = schema.w in header
        if schema.covariates is None:
            covs = [h for h in header if h not in (schema.z, schema.delta, schema.w)]
        else:
            covs = list(schema.covariates)
            missing = [c for c in covs if c not in header]
            if missing:
                raise DataError(f"missing column {missing[0]!r}")
        if not covs:
            raise DataError("no covariate columns")
        pos = {h: i for i, h in enumerate(header)}

        xs, zs, ds, ws = [], [], [], []
        for row, rec in enumerate(reader):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"row {row} has {len(rec)} fields, expected {len(header)}")
            z = _parse_float(rec[pos[schema.z]], row, schema.z)
            dv = _parse_float(rec[pos[schema.delta]], row, schema.delta)
            if dv not in (0.0, 1.0):
                raise DataError(f"event flag must be 0 or 1 at row {row}")
            w = None
            if has_w and rec[pos[schema.w]].strip():
                w = _parse_float(rec[pos[schema.w]], row, schema.w)
            if z < 0 or (w is not None and w < 0):
                raise DataError(f"negative time at row {row}")
            if w is not None and w > z:
                raise DataError(f"transplant after observation end at row {row}")
            xs.append([_parse_float(rec[pos[c]], row, c) for c in covs])
            zs.append(z)
            ds.append(bool(dv))
            ws.append(w)
    return Dataset(np.array(xs).reshape(len(zs), len(covs)), zs, ds, ws, tau=tau, columns=covs)


def save_dataset(data: Dataset, path, schema: Schema = Schema()) -> None:
    """Write ``data`` as CSV with 17 significant digits (lossless for float64)."""
    cols = list(schema.covariates) if schema.covariates is not None else list(data.columns)
    fmt = "{:.17g}".format
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.z, schema.delta, schema.w] + cols)
        for xi, zi, di, wi in zip(data.x, data.z, data.delta, data.w):
            writer.writerow([fmt(zi), int(di), "" if wi is None else fmt(wi)] + [fmt(v) for v in xi])
