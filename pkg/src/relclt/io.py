"""Reading and writing monthly anomaly series.

Two layouts are understood: ``gistemp-wide`` (one row per year after a
``Year`` header, twelve monthly columns, ``***`` marking a missing month)
and ``long-triplet`` (``year,month,value`` rows).
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dgp import TimeSeriesSample
from .errors import RelCLTError

FORMATS = ("gistemp-wide", "long-triplet")
MISSING_MARKERS = ("***", "****", "", "NA", "nan")


class ParseError(RelCLTError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class AnomalyRecord:
    year: int
    month: int
    value: float | None  # None marks a missing observation

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month {self.month} outside 1..12")

    @property
    def key(self) -> tuple[int, int]:
        return self.year, self.month


def _value(tok: str, line: int) -> float | None:
    tok = tok.strip()
    if tok in MISSING_MARKERS:
        return None
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(line, f"cannot parse {tok!r} as a number") from None
    return None if math.isnan(v) else v


def _int(tok: str, line: int, what: str) -> int:
    try:
        return int(tok.strip())
    except ValueError:
        raise ParseError(line, f"cannot parse {what} {tok!r}") from None


def _rows(text: str):
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if row and not row[0].lstrip().startswith("#"):
            yield lineno, row


def parse_gistemp_wide(text: str) -> list[AnomalyRecord]:
    rows = _rows(text)
    for lineno, row in rows:
        if row[0].strip().lower() == "year":
            break
    else:
        raise ParseError(0, "no 'Year' header row found")
    out = []
    for lineno, row in rows:
        if not any(c.strip() for c in row):
            continue
        if len(row) < 13:
            raise ParseError(lineno, f"expected a year and 12 monthly columns, got {len(row)} fields")
        year = _int(row[0], lineno, "year")
        out.extend(AnomalyRecord(year, m, _value(row[m], lineno)) for m in range(1, 13))
    return out


def parse_long_triplet(text: str) -> list[AnomalyRecord]:
    out = []
    for lineno, row in _rows(text):
        if row[0].strip().lower() == "year":
            continue
        if len(row) != 3:
            raise ParseError(lineno, f"expected year,month,value, got {len(row)} fields")
        year, month = _int(row[0], lineno, "year"), _int(row[1], lineno, "month")
        if not 1 <= month <= 12:
            raise ParseError(lineno, f"month {month} outside 1..12")
        out.append(AnomalyRecord(year, month, _value(row[2], lineno)))
    return out


def _check_order(records):
    for a, b in zip(records, records[1:]):
        if b.key <= a.key:
            raise ParseError(0, f"dates not increasing: {a.year}-{a.month:02d} then {b.year}-{b.month:02d}")


def read_records(path, fmt: str) -> list[AnomalyRecord]:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    text = Path(path).read_text()
    recs = parse_gistemp_wide(text) if fmt == "gistemp-wide" else parse_long_triplet(text)
    _check_order(recs)
    return recs


def _impute_linear(values: list[float | None]) -> np.ndarray:
    """Interpolate interior gaps linearly; leading and trailing gaps are dropped."""
    v = np.array([np.nan if x is None else x for x in values])
    ok = np.flatnonzero(~np.isnan(v))
    if ok.size == 0:
        return np.zeros(0)
    v = v[ok[0]:ok[-1] + 1]
    idx = np.arange(v.size)
    good = ~np.isnan(v)
    v[~good] = np.interp(idx[~good], idx[good], v[good])
    return v


def ingest_csv(path, fmt: str = "gistemp-wide", impute: str | None = None) -> TimeSeriesSample:
    """Chronological series of the observed values.

    Missing months are dropped with a warning by default; ``impute="linear"``
    fills interior gaps by linear interpolation instead.
    """
    recs = read_records(path, fmt)
    missing = sum(r.value is None for r in recs)
    if impute == "linear":
        values = _impute_linear([r.value for r in recs])
        if missing:
            warnings.warn(f"{missing} missing values linearly imputed (edge gaps dropped)")
    elif impute is None:
        values = np.array([r.value for r in recs if r.value is not None])
        if missing:
            warnings.warn(f"{missing} missing values dropped")
    else:
        raise ValueError("impute must be None or 'linear'")
    if values.size == 0:
        raise ParseError(0, "no observations in file")
    return TimeSeriesSample(values, f"data:{Path(path).name}")


def emit_long_triplet(records, path=None) -> str:
    """Write records as ``year,month,value``; values use repr so re-reading is bit-exact."""
    buf = io.StringIO()
    buf.write("year,month,value\n")
    for r in records:
        buf.write(f"{r.year},{r.month},{'***' if r.value is None else repr(float(r.value))}\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def records_from_series(values, start_year: int = 1, start_month: int = 1) -> list[AnomalyRecord]:
    out = []
    y, m = start_year, start_month
    for v in np.asarray(values, dtype=float):
        out.append(AnomalyRecord(y, m, float(v)))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out
