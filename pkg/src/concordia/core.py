"""Data model, CSV ingestion, event grids and step-function primitives.

Time integrals over ``[0, tau]`` are computed throughout the package as
Stieltjes sums over the event grid: integrands that must be predictable are
evaluated at left limits, increments are the jumps at grid times.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataValidationError, EmptyDataError, EmptyGridError, SchemaError

__all__ = [
    "Observation",
    "Dataset",
    "load_csv",
    "write_csv",
    "event_grid",
    "StepFunction",
    "StepCurves",
    "empirical_cdf",
    "EPS",
]

#: Floor applied to survival-type denominators.
EPS = 1e-8


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Observation:
    time: float
    event: int
    covariates: tuple


@dataclass(frozen=True, eq=False)
class Dataset:
    """Right-censored sample ``(time, event, X)`` observed on ``[0, tau]``.

    Arrays are stored read-only; ``X`` has shape ``(n, d)``.
    """

    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    covariate_names: tuple = ()
    tau: float = 1.0
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        time = _frozen(self.time)
        event = _frozen(self.event, dtype=np.int64)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X.setflags(write=False)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "tau", float(self.tau))
        if self.validate:
            self._check()

    def _check(self):
        n = len(self.time)
        if n == 0:
            raise EmptyDataError("dataset has no rows")
        if len(self.event) != n or self.X.shape[0] != n:
            raise DataValidationError("time, event and covariates differ in length")
        if n < 2:
            raise DataValidationError("need at least two observations")
        if self.X.shape[1] < 1:
            raise DataValidationError("need at least one covariate")
        if len(self.covariate_names) != self.X.shape[1]:
            raise DataValidationError("covariate_names does not match covariate dimension")
        if not self.tau > 0:
            raise DataValidationError("tau must be positive")
        bad = np.flatnonzero(~np.isfinite(self.time) | (self.time < 0))
        if bad.size:
            raise DataValidationError(f"invalid time at row {bad[0] + 1}", row=int(bad[0]) + 1)
        bad = np.flatnonzero((self.event != 0) & (self.event != 1))
        if bad.size:
            raise DataValidationError(f"event must be 0 or 1 (row {bad[0] + 1})", row=int(bad[0]) + 1)
        bad = np.flatnonzero(~np.all(np.isfinite(self.X), axis=1))
        if bad.size:
            raise DataValidationError(f"non-finite covariate at row {bad[0] + 1}", row=int(bad[0]) + 1)
        if not np.any((self.event == 1) & (self.time <= self.tau)):
            raise EmptyGridError("no uncensored event at or before tau")

    @property
    def n(self) -> int:
        return len(self.time)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(float(t), int(e), tuple(float(v) for v in x))
            for t, e, x in zip(self.time, self.event, self.X)
        ]

    def subset(self, index, validate=True) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.time[index], self.event[index], self.X[index],
                       self.covariate_names, self.tau, validate=validate)

    def with_tau(self, tau) -> "Dataset":
        return Dataset(self.time, self.event, self.X, self.covariate_names, tau)

    def select(self, columns: Sequence[str]) -> "Dataset":
        """Keep only the named covariate columns."""
        idx = [self.covariate_names.index(c) for c in columns]
        return Dataset(self.time, self.event, self.X[:, idx], tuple(columns), self.tau)

    def canonical_order(self) -> np.ndarray:
        """Row permutation sorting by (time, event, covariates)."""
        keys = [self.X[:, j] for j in range(self.d - 1, -1, -1)] + [self.event, self.time]
        return np.lexsort(keys)

    @classmethod
    def from_observations(cls, observations, covariate_names, tau):
        obs = list(observations)
        return cls([o.time for o in obs], [o.event for o in obs],
                   [list(o.covariates) for o in obs], covariate_names, tau)


def load_csv(path, time_col, event_col, covariate_cols, tau) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Rows are kept in file order. Blank cells are rejected rather than imputed.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataError(f"{path} is empty") from None
        cols = [time_col, event_col, *covariate_cols]
        for c in cols:
            if c not in header:
                raise SchemaError(f"missing column {c!r}", column=c)
        pos = [header.index(c) for c in cols]
        values = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values.append([float(row[p]) for p in pos])
            except (ValueError, IndexError):
                raise DataValidationError(f"non-numeric or missing value at row {row_no}",
                                          row=row_no) from None
    if not values:
        raise EmptyDataError(f"{path} has no data rows")
    arr = np.array(values)
    ev = arr[:, 1]
    bad = np.flatnonzero((ev != 0) & (ev != 1))
    if bad.size:
        raise DataValidationError(f"event must be 0 or 1 (row {bad[0] + 1})", row=int(bad[0]) + 1)
    return Dataset(arr[:, 0], ev.astype(int), arr[:, 2:], tuple(covariate_cols), tau)


def write_csv(data: Dataset, path, time_col="time", event_col="event"):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([time_col, event_col, *data.covariate_names])
        for t, e, x in zip(data.time, data.event, data.X):
            w.writerow([repr(float(t)), int(e), *(repr(float(v)) for v in x)])


def event_grid(data: Dataset, upto=None) -> np.ndarray:
    """Sorted distinct uncensored event times ``<= upto`` (default ``tau``)."""
    upto = data.tau if upto is None else upto
    grid = np.unique(data.time[(data.event == 1) & (data.time <= upto)])
    if grid.size == 0:
        raise EmptyGridError(f"no uncensored events at or before {upto}")
    return grid


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function with ``initial_value`` on ``[0, knots[0])``."""

    knots: np.ndarray
    values: np.ndarray
    initial_value: float = 0.0
    kind: str | None = None  # "survival", "cumhaz" or None

    def __post_init__(self):
        knots = _frozen(self.knots)
        values = _frozen(self.values)
        if knots.shape != values.shape:
            raise ValueError("knots and values differ in length")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if self.kind == "survival":
            if self.initial_value != 1.0 or np.any(np.diff(values) > 0) or np.any(
                    (values < 0) | (values > 1)):
                raise ValueError("not a valid survival curve")
        elif self.kind == "cumhaz":
            if self.initial_value != 0.0 or np.any(np.diff(values) < 0):
                raise ValueError("not a valid cumulative hazard")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t, side="right"):
        return step_eval(self, t, side)

    def jumps(self) -> np.ndarray:
        return np.diff(self.values, prepend=self.initial_value)

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["knot", "value"])
            for k, v in zip(self.knots, self.values):
                w.writerow([repr(float(k)), repr(float(v))])


def step_eval(f: StepFunction, t, side="right"):
    """Evaluate ``f(t)`` (``side="right"``) or the left limit ``f(t-)``."""
    if side not in ("right", "left"):
        raise ValueError("side must be 'right' or 'left'")
    t = np.asarray(t, dtype=float)
    pos = np.searchsorted(f.knots, t, side="right" if side == "right" else "left")
    vals = np.concatenate([[f.initial_value], f.values])
    out = vals[pos]
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class StepCurves:
    """A batch of conditional curves sharing one knot set.

    ``increments[i, k]`` is the cumulative-hazard jump of curve ``i`` at
    ``knots[k]``. ``convention`` fixes how survival is derived:
    ``"exp"`` gives ``exp(-Lambda)``, ``"product"`` the product limit.
    """

    knots: np.ndarray
    increments: np.ndarray
    convention: str = "product"

    def __post_init__(self):
        inc = np.atleast_2d(np.asarray(self.increments, dtype=float))
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        if self.convention not in ("exp", "product"):
            raise ValueError("convention must be 'exp' or 'product'")

    @property
    def n(self):
        return self.increments.shape[0]

    def _index(self, times, side):
        return np.searchsorted(self.knots, np.asarray(times, dtype=float),
                               side="right" if side == "right" else "left")

    def cumhaz(self, times, side="right") -> np.ndarray:
        cum = np.concatenate([np.zeros((self.n, 1)), np.cumsum(self.increments, axis=1)], axis=1)
        return cum[:, self._index(times, side)]

    def survival(self, times, side="right") -> np.ndarray:
        if self.convention == "exp":
            return np.exp(-self.cumhaz(times, side))
        factors = np.clip(1.0 - self.increments, 0.0, 1.0)
        surv = np.concatenate([np.ones((self.n, 1)), np.cumprod(factors, axis=1)], axis=1)
        return surv[:, self._index(times, side)]

    def row(self, i) -> tuple[StepFunction, StepFunction]:
        """Survival and cumulative hazard of curve ``i`` as step functions."""
        cumhaz = np.cumsum(self.increments[i])
        surv = self.survival(self.knots)[i]
        return (StepFunction(self.knots, surv, 1.0, "survival"),
                StepFunction(self.knots, cumhaz, 0.0, "cumhaz"))


def empirical_cdf(scores):
    """Return ``y -> n^-1 sum_i I(Y_i <= y)`` (right-continuous, vectorised)."""
    s = np.sort(np.asarray(scores, dtype=float))
    n = len(s)

    def cdf(y):
        out = np.searchsorted(s, np.asarray(y, dtype=float), side="right") / n
        return out if np.ndim(out) else float(out)

    return cdf


def on_grid(curves: StepCurves, grid):
    """Cumulative-hazard increments and survival of ``curves`` on ``grid``.

    Returns ``(dLambda, S, S_left)`` each of shape ``(n, len(grid))`` where
    ``S_left[:, k]`` is the value at the previous grid point (1 before the first).
    Jumps falling between grid points are absorbed into the next grid point.
    """
    cum = curves.cumhaz(grid)
    dlam = np.diff(cum, axis=1, prepend=0.0)
    surv = curves.survival(grid)
    surv_left = np.concatenate([np.ones((surv.shape[0], 1)), surv[:, :-1]], axis=1)
    return dlam, surv, surv_left


def counting_processes(data: Dataset, grid):
    """``dN[i, k] = I(T_i = u_k, event)`` and ``at_risk[i, k] = I(T_i >= u_k)``."""
    t = data.time[:, None]
    grid = np.asarray(grid)[None, :]
    dN = ((t == grid) & (data.event[:, None] == 1)).astype(float)
    at_risk = (t >= grid).astype(float)
    return dN, at_risk
