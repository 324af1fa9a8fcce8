"""Fidelity datasets, nominal input-space mappings, scaling, CSV ingestion.

CSV schemas (UTF-8, comma delimiter, '.' decimal separator):

* dataset file: header ``fidelity,x1,...,xd,y``, one row per observation;
* nominal-value table: header ``hf_row_index,z1,...,zdlf`` giving the mapped
  low-fidelity coordinates of each high-fidelity training row.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    MappingUnavailable,
    MissingNominalRow,
    NonFiniteValue,
    SchemaMismatch,
    ZeroVariance,
)

_BOUNDS_TOL = 1e-9


@dataclass(frozen=True)
class FidelityDataset:
    """Inputs, outputs and box bounds of one fidelity level."""

    X: np.ndarray
    y: np.ndarray
    bounds: np.ndarray  # (d, 2) [lo, hi] per dimension
    fidelity: int = 0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "bounds", bounds)
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch("X and y row counts differ")
        if X.shape[0] < 1:
            raise DimensionMismatch("a fidelity dataset needs at least one row")
        if X.shape[1] != bounds.shape[0]:
            raise DimensionMismatch("bounds do not match input dimension")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise NonFiniteValue("dataset contains NaN or Inf")
        span = np.maximum(bounds[:, 1] - bounds[:, 0], 1.0)
        if np.any(X < bounds[:, 0] - _BOUNDS_TOL * span) or np.any(
            X > bounds[:, 1] + _BOUNDS_TOL * span
        ):
            raise DimensionMismatch("dataset rows lie outside the declared bounds")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class NominalMapping:
    """Known mapping from a high-fidelity input space to a low-fidelity one.

    Three representations are supported: an evaluable vectorized function,
    a linear map ``x -> x @ A + b``, or a per-point table that only covers a
    declared set of source points.
    """

    source_dim: int
    target_dim: int
    func: Callable[[np.ndarray], np.ndarray] | None = None
    linear: tuple[np.ndarray, np.ndarray] | None = None
    table: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        forms = [self.func is not None, self.linear is not None, self.table is not None]
        if sum(forms) != 1:
            raise ValueError("exactly one of func/linear/table must be given")
        if self.linear is not None:
            A, b = (np.asarray(v, dtype=float) for v in self.linear)
            if A.shape != (self.source_dim, self.target_dim) or b.shape != (self.target_dim,):
                raise DimensionMismatch("linear mapping coefficients have wrong shape")
            object.__setattr__(self, "linear", (A, b))
        if self.table is not None:
            pts, vals = (np.asarray(v, dtype=float) for v in self.table)
            if pts.shape[1] != self.source_dim or vals.shape[1] != self.target_dim:
                raise DimensionMismatch("table columns do not match declared dims")
            if pts.shape[0] != vals.shape[0]:
                raise DimensionMismatch("table point/value row counts differ")
            object.__setattr__(self, "table", (pts, vals))

    @property
    def kind(self) -> str:
        if self.func is not None:
            return "function"
        return "linear" if self.linear is not None else "table"

    @property
    def evaluable(self) -> bool:
        """Whether the mapping can be applied at arbitrary points."""
        return self.table is None

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.source_dim:
            raise DimensionMismatch(
                f"points have {X.shape[1]} columns, mapping expects {self.source_dim}"
            )
        if self.func is not None:
            out = np.atleast_2d(np.asarray(self.func(X), dtype=float))
            if out.shape != (X.shape[0], self.target_dim):
                raise DimensionMismatch("mapping function returned wrong shape")
            return out
        if self.linear is not None:
            A, b = self.linear
            return X @ A + b
        pts, vals = self.table
        out = np.empty((X.shape[0], self.target_dim))
        for i, row in enumerate(X):
            hits = np.where(np.all(np.abs(pts - row) <= 1e-12, axis=1))[0]
            if hits.size == 0:
                raise MappingUnavailable(
                    "per-point nominal mapping queried at an unseen point"
                )
            out[i] = vals[hits[0]]
        return out


@dataclass(frozen=True)
class IoTransform:
    """Invertible record of the input/output scaling applied before fitting.

    Inputs are min-max scaled to [0, 1] per fidelity using the declared
    bounds; every fidelity's outputs get the same affine transform that
    standardizes the high-fidelity outputs.
    """

    input_bounds: tuple[np.ndarray, ...]  # per fidelity (d, 2)
    y_mean: float
    y_std: float

    def scale_x(self, t: int, X) -> np.ndarray:
        lo, hi = self.input_bounds[t][:, 0], self.input_bounds[t][:, 1]
        return (np.atleast_2d(np.asarray(X, dtype=float)) - lo) / (hi - lo)

    def unscale_x(self, t: int, X01) -> np.ndarray:
        lo, hi = self.input_bounds[t][:, 0], self.input_bounds[t][:, 1]
        return np.atleast_2d(np.asarray(X01, dtype=float)) * (hi - lo) + lo

    def scale_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def unscale_y(self, y01) -> np.ndarray:
        return np.asarray(y01, dtype=float) * self.y_std + self.y_mean

    def unscale_var(self, var01) -> np.ndarray:
        return np.asarray(var01, dtype=float) * self.y_std**2


def scale_io(datasets, shared_input_bounds=None):
    """Scale a list of datasets (highest fidelity last) for model fitting.

    Returns (scaled datasets, IoTransform).  ``shared_input_bounds`` forces a
    common input transform across fidelities, which same-input-space models
    need so that the scaling does not silently remap coordinates.
    """
    datasets = list(datasets)
    hf = datasets[-1]
    y_mean = float(np.mean(hf.y))
    y_std = float(np.std(hf.y))
    if y_std <= 0.0:
        raise ZeroVariance("high-fidelity outputs are constant; cannot standardize")
    bounds = []
    for ds in datasets:
        b = np.asarray(shared_input_bounds if shared_input_bounds is not None else ds.bounds)
        b = b.reshape(-1, 2).astype(float)
        if b.shape[0] != ds.dim:
            raise DimensionMismatch("shared bounds do not match dataset dimension")
        bounds.append(b)
    tf = IoTransform(input_bounds=tuple(bounds), y_mean=y_mean, y_std=y_std)
    scaled = []
    for t, ds in enumerate(datasets):
        x01 = tf.scale_x(t, ds.X)
        # shared-bounds scaling can legitimately land outside [0, 1]
        lo = np.minimum(x01.min(axis=0), 0.0)
        hi = np.maximum(x01.max(axis=0), 1.0)
        scaled.append(
            FidelityDataset(
                X=x01,
                y=tf.scale_y(ds.y),
                bounds=np.column_stack([lo, hi]),
                fidelity=ds.fidelity,
            )
        )
    return scaled, tf


@dataclass(frozen=True)
class CsvSchema:
    """Declared layout of a dataset CSV: input dimension and box bounds."""

    dim: int
    bounds: np.ndarray | None = None

    def __post_init__(self):
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
            if b.shape[0] != self.dim:
                raise SchemaMismatch("schema bounds do not match declared dimension")
            object.__setattr__(self, "bounds", b)


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaMismatch(f"{path}: empty file")
    return rows[0], rows[1:]


def load_dataset_csv(path, schema: CsvSchema):
    """Load one dataset file; returns {fidelity index: FidelityDataset}.

    The header must be exactly ``fidelity,x1,...,xd,y`` for the schema's d.
    Bounds come from the schema, or from the observed data range when the
    schema leaves them unset.
    """
    header, body = _read_rows(path)
    expected = ["fidelity"] + [f"x{i + 1}" for i in range(schema.dim)] + ["y"]
    if [h.strip() for h in header] != expected:
        raise SchemaMismatch(
            f"{path}: header {header!r} does not match expected {expected!r}"
        )
    if not body:
        raise SchemaMismatch(f"{path}: no data rows")
    parsed = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(expected):
            raise SchemaMismatch(f"{path}:{lineno}: wrong column count")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise SchemaMismatch(f"{path}:{lineno}: {exc}") from exc
        if not all(np.isfinite(vals)):
            raise NonFiniteValue(f"{path}:{lineno}: non-finite value")
        parsed.append(vals)
    arr = np.asarray(parsed)
    out = {}
    for fid in sorted(set(int(v) for v in arr[:, 0])):
        block = arr[arr[:, 0].astype(int) == fid]
        X = block[:, 1 : 1 + schema.dim]
        y = block[:, -1]
        if schema.bounds is not None:
            bounds = schema.bounds
        else:
            bounds = np.column_stack([X.min(axis=0), X.max(axis=0)])
        out[fid] = FidelityDataset(X=X, y=y, bounds=bounds, fidelity=fid)
    return out


def load_nominal_csv(path, target_dim: int, n_hf: int) -> np.ndarray:
    """Load a nominal-value table covering high-fidelity rows 0..n_hf-1."""
    header, body = _read_rows(path)
    expected = ["hf_row_index"] + [f"z{i + 1}" for i in range(target_dim)]
    if [h.strip() for h in header] != expected:
        raise SchemaMismatch(
            f"{path}: header {header!r} does not match expected {expected!r}"
        )
    table = np.full((n_hf, target_dim), np.nan)
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(expected):
            raise SchemaMismatch(f"{path}:{lineno}: wrong column count")
        idx = int(float(row[0]))
        vals = [float(v) for v in row[1:]]
        if not all(np.isfinite(vals)):
            raise NonFiniteValue(f"{path}:{lineno}: non-finite value")
        if 0 <= idx < n_hf:
            table[idx] = vals
    missing = np.where(np.any(np.isnan(table), axis=1))[0]
    if missing.size:
        raise MissingNominalRow(f"{path}: missing nominal rows {missing.tolist()}")
    return table
