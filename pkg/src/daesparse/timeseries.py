"""Sampled state trajectories: CSV ingest, noise injection, smoothing and
derivative estimation.

A :class:`TimeSeriesTable` holds one or more trajectories (segments) of a
d-dimensional state sampled at increasing times.  Segments are independent
initial conditions, so smoothing and differentiation never cross a segment
boundary.
"""

from __future__ import annotations

import csv
import io
import math
import os
import zlib
from dataclasses import dataclass, field
from typing import IO, Iterator, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateName,
    EmptyTable,
    MissingState,
    NonMonotonicTime,
    NonNumericCell,
    NonUniformGrid,
)

# relative tolerance on sample spacing before a segment counts as non-uniform
UNIFORM_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class TimeSeriesTable:
    """N x d state samples with time stamps, column names and segment tags.

    Rows belonging to one segment must appear in strictly increasing time
    order.  Use :func:`load_table` to ingest unsorted CSV data.
    """

    times: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray
    segment_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        names = tuple(str(n) for n in self.names)
        seg = self.segment_ids
        seg = np.zeros(len(times), dtype=np.int64) if seg is None else np.asarray(seg, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "segment_ids", seg)
        _validate(self)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n_samples

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise MissingState(f"state {name!r} not in table", module="timeseries", op="column") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name)

    def segments(self) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(segment_id, row_indices)`` in order of first appearance."""
        _, first = np.unique(self.segment_ids, return_index=True)
        for sid in self.segment_ids[np.sort(first)]:
            yield int(sid), np.flatnonzero(self.segment_ids == sid)

    def select(self, names: Sequence[str]) -> "TimeSeriesTable":
        idx = []
        for n in names:
            if n not in self.names:
                raise MissingState(f"state {n!r} not in table", module="timeseries", op="select")
            idx.append(self.names.index(n))
        return TimeSeriesTable(self.times, tuple(names), self.values[:, idx], self.segment_ids)

    def with_values(self, values: np.ndarray, names: Sequence[str] | None = None) -> "TimeSeriesTable":
        return TimeSeriesTable(self.times, tuple(names or self.names), values, self.segment_ids)

    def concat(self, other: "TimeSeriesTable", renumber: bool = True) -> "TimeSeriesTable":
        """Stack rows of ``other`` below this table.

        With ``renumber`` the segments of ``other`` are shifted past the
        largest segment id of ``self`` so they stay distinct.
        """
        if other.names != self.names:
            raise DataError("cannot concatenate tables with different columns", module="timeseries", op="concat")
        seg = other.segment_ids
        if renumber and len(self):
            seg = seg - seg.min() + self.segment_ids.max() + 1
        return TimeSeriesTable(
            np.concatenate([self.times, other.times]),
            self.names,
            np.vstack([self.values, other.values]),
            np.concatenate([self.segment_ids, seg]),
        )


@dataclass(frozen=True, eq=False)
class DerivativeTable:
    """Time derivatives aligned row-for-row with a source table."""

    times: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray
    segment_ids: np.ndarray
    order: int
    method: dict

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise MissingState(f"no derivative for {name!r}", module="timeseries", op="column") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name)


def _validate(table: TimeSeriesTable) -> None:
    op = "TimeSeriesTable"
    if table.values.ndim != 2:
        raise DataError("values must be a 2-D array", module="timeseries", op=op)
    n, d = table.values.shape
    if n == 0 or d == 0:
        raise EmptyTable("table has no rows or no state columns", module="timeseries", op=op)
    if len(table.names) != d:
        raise DataError(f"{len(table.names)} names for {d} columns", module="timeseries", op=op)
    if len(set(table.names)) != d:
        dup = sorted({x for x in table.names if table.names.count(x) > 1})
        raise DuplicateName(f"duplicate state names: {dup}", module="timeseries", op=op)
    if table.times.shape != (n,) or table.segment_ids.shape != (n,):
        raise DataError("times/segment_ids length must equal row count", module="timeseries", op=op)
    if not (np.all(np.isfinite(table.values)) and np.all(np.isfinite(table.times))):
        raise DataError("non-finite entries in table", module="timeseries", op=op)
    for sid in np.unique(table.segment_ids):
        t = table.times[table.segment_ids == sid]
        if np.any(np.diff(t) <= 0):
            raise NonMonotonicTime(
                f"times not strictly increasing in segment {int(sid)}", module="timeseries", op=op
            )


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8-sig")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8-sig")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data.lstrip("﻿")


def load_table(source: bytes | str | os.PathLike | IO) -> TimeSeriesTable:
    """Parse CSV text into a validated table.

    The first header must be ``t``; an optional ``segment`` column holds
    integer trajectory ids.  Rows are sorted by ``(segment, t)``.  ``source``
    may be raw bytes, a path, or a binary/text stream.
    """
    op = "load_table"
    text = _read_text(source)
    rows = [r for r in csv.reader(io.StringIO(text, newline="")) if any(c.strip() for c in r)]
    if not rows:
        raise EmptyTable("empty CSV input", module="timeseries", op=op)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise DataError("first column header must be 't'", module="timeseries", op=op)
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise DuplicateName(f"duplicate column names: {dup}", module="timeseries", op=op)
    body = rows[1:]
    if not body:
        raise EmptyTable("CSV has a header but no data rows", module="timeseries", op=op)

    seg_col = header.index("segment") if "segment" in header else None
    state_cols = [i for i in range(1, len(header)) if i != seg_col]
    if not state_cols:
        raise EmptyTable("CSV has no state columns", module="timeseries", op=op)

    n = len(body)
    times = np.empty(n)
    seg = np.zeros(n, dtype=np.int64)
    vals = np.empty((n, len(state_cols)))
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"line {r}: expected {len(header)} cells, got {len(row)}", module="timeseries", op=op)
        i = r - 2
        try:
            times[i] = float(row[0])
            if seg_col is not None:
                seg[i] = int(row[seg_col])
            for j, c in enumerate(state_cols):
                vals[i, j] = float(row[c])
        except ValueError as exc:
            raise NonNumericCell(f"line {r}: {exc}", module="timeseries", op=op) from None
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(times))):
        raise DataError("non-finite cell in CSV", module="timeseries", op=op)

    order = np.lexsort((times, seg))
    times, seg, vals = times[order], seg[order], vals[order]
    for sid in np.unique(seg):
        if np.any(np.diff(times[seg == sid]) <= 0):
            raise NonMonotonicTime(
                f"repeated or decreasing time in segment {int(sid)}", module="timeseries", op=op
            )
    return TimeSeriesTable(times, tuple(header[c] for c in state_cols), vals, seg)


def write_table(table: TimeSeriesTable, dest: str | os.PathLike | IO | None = None) -> bytes:
    """Serialise ``table`` as CSV using shortest round-trip float formatting.

    Returns the encoded bytes; also writes them to ``dest`` when given.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "segment", *table.names])
    for t, s, row in zip(table.times, table.segment_ids, table.values):
        w.writerow([repr(float(t)), int(s), *(repr(float(v)) for v in row)])
    data = buf.getvalue().encode("utf-8")
    if dest is not None:
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "wb") as fh:
                fh.write(data)
        else:
            try:
                dest.write(data)
            except TypeError:
                dest.write(data.decode("utf-8"))
    return data


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------

def _column_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by column name so a column's noise does not depend on its position
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


def inject_noise(table: TimeSeriesTable, pct: float, seed: int,
                 columns: Sequence[str] | None = None) -> TimeSeriesTable:
    """Add ``pct * std(column) * N(0, 1)`` to each column.

    ``pct`` is a fraction (0.15 means 15 %).  The standard deviation is the
    sample std of the column over all segments jointly.
    """
    if pct < 0:
        raise DataError("noise percentage must be non-negative", module="timeseries", op="inject_noise")
    if pct == 0:
        return table.with_values(table.values.copy())
    out = table.values.copy()
    for j, name in enumerate(table.names):
        if columns is not None and name not in columns:
            continue
        col = table.values[:, j]
        sigma = np.std(col, ddof=1) if len(col) > 1 else 0.0
        out[:, j] = col + pct * sigma * _column_rng(seed, name).standard_normal(len(col))
    return table.with_values(out)


def inject_snr_noise(table: TimeSeriesTable, snr_db: float, seed: int,
                     columns: Sequence[str] | None = None) -> TimeSeriesTable:
    """Additive white Gaussian noise at a given signal-to-noise ratio.

    Signal power is the mean square of each column, so the noise variance is
    ``mean(x**2) / 10**(snr_db / 10)``.
    """
    out = table.values.copy()
    for j, name in enumerate(table.names):
        if columns is not None and name not in columns:
            continue
        col = table.values[:, j]
        power = float(np.mean(col ** 2))
        sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
        out[:, j] = col + sigma * _column_rng(seed, name).standard_normal(len(col))
    return table.with_values(out)


# --------------------------------------------------------------------------
# Savitzky-Golay
# --------------------------------------------------------------------------

def _check_sg(n: int, window: int, polyorder: int, op: str) -> None:
    if int(window) != window or window < 1 or window % 2 == 0:
        raise DataError(f"window must be a positive odd integer, got {window}", module="timeseries", op=op)
    if polyorder < 0 or window <= polyorder:
        raise DataError(f"window ({window}) must exceed polyorder ({polyorder})", module="timeseries", op=op)
    if n < window:
        raise DataError(f"series of length {n} shorter than window {window}", module="timeseries", op=op)


def _sg_weights(window: int, polyorder: int, order: int, at: np.ndarray) -> np.ndarray:
    """Rows of weights giving the ``order``-th derivative of the local fit at offsets ``at``.

    The abscissa is scaled to [-1, 1] before the least-squares fit; the
    unscaled sample-index Vandermonde loses several digits at high polyorder.
    """
    half = window // 2
    x = (np.arange(window) - half) / max(half, 1)
    pinv = np.linalg.pinv(np.vander(x, polyorder + 1, increasing=True))  # (p+1, window)
    z = np.asarray(at, dtype=float) / max(half, 1)
    m = np.arange(order, polyorder + 1)
    fall = np.array([math.perm(int(j), order) for j in m], dtype=float)
    basis = fall * z[:, None] ** (m - order)  # (len(at), p+1-order)
    return basis @ pinv[order:]


def _savgol(y: np.ndarray, dt: float, window: int, polyorder: int, order: int) -> np.ndarray:
    n, half = len(y), window // 2
    scale = (max(half, 1) * dt) ** order if order else 1.0
    out = np.empty(n)
    centre = _sg_weights(window, polyorder, order, np.array([0.0]))[0]
    out[half:n - half] = np.correlate(y, centre, mode="valid")
    edge = np.arange(-half, 0, dtype=float)
    if half:
        out[:half] = _sg_weights(window, polyorder, order, edge) @ y[:window]
        out[n - half:] = _sg_weights(window, polyorder, order, -edge[::-1]) @ y[n - window:]
    return out / scale


def smooth_savgol(series, dt: float, window: int, polyorder: int) -> np.ndarray:
    """Local least-squares polynomial smoothing.

    Interior points use the centred window; the first and last ``window//2``
    points are evaluated off-centre on the polynomial fitted to the boundary
    window, so the output has the same length as the input.
    """
    y = np.asarray(series, dtype=float)
    _check_sg(len(y), window, polyorder, "smooth_savgol")
    return _savgol(y, dt, int(window), int(polyorder), 0)


def estimate_derivative(series, dt: float, order: int, window: int, polyorder: int) -> np.ndarray:
    """Derivative of order 1 or 2 of the local Savitzky-Golay polynomial."""
    y = np.asarray(series, dtype=float)
    if order not in (1, 2):
        raise DataError(f"derivative order must be 1 or 2, got {order}", module="timeseries", op="estimate_derivative")
    _check_sg(len(y), window, polyorder, "estimate_derivative")
    if polyorder < order:
        raise DataError("polyorder must be at least the derivative order", module="timeseries", op="estimate_derivative")
    if dt <= 0:
        raise DataError("dt must be positive", module="timeseries", op="estimate_derivative")
    return _savgol(y, dt, int(window), int(polyorder), order)


def segment_step(times: np.ndarray) -> float:
    """Uniform sample spacing of one segment, or raise NonUniformGrid."""
    d = np.diff(times)
    if len(d) == 0:
        raise DataError("segment has a single sample", module="timeseries", op="segment_step")
    dt = float(np.mean(d))
    if np.max(np.abs(d - dt)) > UNIFORM_RTOL * abs(dt):
        raise NonUniformGrid("segment sampled on a non-uniform grid; resample first",
                             module="timeseries", op="segment_step")
    return dt


def smooth_table(table: TimeSeriesTable, window: int, polyorder: int,
                 names: Sequence[str] | None = None) -> TimeSeriesTable:
    out = table.values.copy()
    cols = [table.names.index(n) for n in (names or table.names)]
    for _, rows in table.segments():
        dt = segment_step(table.times[rows])
        for j in cols:
            out[rows, j] = smooth_savgol(table.values[rows, j], dt, window, polyorder)
    return table.with_values(out)


def differentiate_table(table: TimeSeriesTable, order: int, window: int, polyorder: int,
                        names: Sequence[str] | None = None) -> DerivativeTable:
    """Per-segment Savitzky-Golay derivatives of the selected columns."""
    names = tuple(names or table.names)
    cols = []
    for n in names:
        if n not in table.names:
            raise MissingState(f"state {n!r} not in table", module="timeseries", op="differentiate_table")
        cols.append(table.names.index(n))
    out = np.empty((table.n_samples, len(names)))
    for _, rows in table.segments():
        dt = segment_step(table.times[rows])
        for k, j in enumerate(cols):
            out[rows, k] = estimate_derivative(table.values[rows, j], dt, order, window, polyorder)
    return DerivativeTable(
        table.times, names, out, table.segment_ids, order,
        {"kind": "savgol", "window": int(window), "polyorder": int(polyorder)},
    )
