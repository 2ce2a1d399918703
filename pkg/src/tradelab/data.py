"""OHLCV market data: candle types, CSV ingestion, windowing and resampling.

Series are stored as plain CSV files under a warehouse directory laid out as
``<root>/<symbol>/<interval>.csv`` with a ``<interval>.meta.json`` sidecar.
The CSV format is fixed: header ``timestamp,open,high,low,close,volume``,
timestamps in integer milliseconds since epoch (UTC), prices/volumes written
with ``repr`` so a write/parse round trip is bit-exact.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .errors import ValidationError

logger = logging.getLogger(__name__)

CSV_HEADER = "timestamp,open,high,low,close,volume"


class MalformedRow(ValidationError):
    """A CSV row could not be parsed (wrong column count or bad number)."""


class OhlcViolation(ValidationError):
    """Candle prices break the low <= open/close <= high ordering."""


class DuplicateTimestamp(ValidationError):
    """Two candles share the same timestamp."""


class GapDetected(ValidationError):
    """Consecutive candles are not exactly one interval apart."""


class EmptyWindow(ValidationError):
    """A slice request matched no candles."""


class EmptyResult(ValidationError):
    """Resampling produced no complete group."""


@dataclass(frozen=True, slots=True)
class Candle:
    """One OHLCV bar. ``ts`` is in milliseconds since epoch (UTC)."""

    ts: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self) -> None:
        if not (self.low <= self.open <= self.high) or not (self.low <= self.close <= self.high):
            raise OhlcViolation(
                f"ts={self.ts}: prices must satisfy low <= open/close <= high "
                f"(o={self.open}, h={self.high}, l={self.low}, c={self.close})"
            )
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise OhlcViolation(f"ts={self.ts}: prices must be positive")
        if self.volume < 0:
            raise OhlcViolation(f"ts={self.ts}: volume must be non-negative")


@dataclass(frozen=True)
class CandleSeries:
    """An ordered, regularly spaced run of candles for one symbol.

    ``interval`` is the bar duration in seconds. Timestamps must be strictly
    increasing and, unless ``has_gaps`` marks the series, consecutive bars
    must be exactly one interval apart. Instances are immutable and safe to
    share across threads.
    """

    symbol: str
    interval: int
    candles: tuple[Candle, ...]
    has_gaps: bool = False

    def __post_init__(self) -> None:
        if self.interval < 1:
            raise ValidationError(f"interval must be >= 1 second, got {self.interval}")
        step = self.interval * 1000
        prev = None
        for c in self.candles:
            if prev is not None:
                if c.ts == prev:
                    raise DuplicateTimestamp(f"duplicate timestamp {c.ts} in {self.symbol}")
                if c.ts < prev:
                    raise ValidationError(f"timestamps not increasing at {c.ts} in {self.symbol}")
                if c.ts - prev != step and not self.has_gaps:
                    raise GapDetected(
                        f"{self.symbol}: expected {prev + step} after {prev}, got {c.ts}"
                    )
            prev = c.ts

    def __len__(self) -> int:
        return len(self.candles)

    @cached_property
    def opens(self) -> list[float]:
        return [c.open for c in self.candles]

    @cached_property
    def highs(self) -> list[float]:
        return [c.high for c in self.candles]

    @cached_property
    def lows(self) -> list[float]:
        return [c.low for c in self.candles]

    @cached_property
    def closes(self) -> list[float]:
        return [c.close for c in self.candles]

    @cached_property
    def volumes(self) -> list[float]:
        return [c.volume for c in self.candles]

    @cached_property
    def timestamps(self) -> list[int]:
        return [c.ts for c in self.candles]


@dataclass(frozen=True, slots=True)
class DatasetMeta:
    """Sidecar description of one warehoused series."""

    source: str
    symbol: str
    interval: int
    first_ts: int
    last_ts: int
    bar_count: int

    @classmethod
    def for_series(cls, series: CandleSeries, source: str) -> "DatasetMeta":
        return cls(
            source=source,
            symbol=series.symbol,
            interval=series.interval,
            first_ts=series.candles[0].ts if series.candles else 0,
            last_ts=series.candles[-1].ts if series.candles else 0,
            bar_count=len(series),
        )


def parse_csv(path: str | Path, symbol: str, interval: int, allow_gaps: bool = False) -> CandleSeries:
    """Read a candle CSV and return a validated series.

    Rows are sorted by timestamp, so file order does not matter. Gaps are an
    error unless ``allow_gaps`` downgrades them to a warning and marks the
    returned series.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise MalformedRow(f"{path}:1: header must be exactly '{CSV_HEADER}'")

    candles = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise MalformedRow(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
        try:
            ts = int(parts[0])
            o, h, l, c, v = (float(x) for x in parts[1:])
        except ValueError as exc:
            raise MalformedRow(f"{path}:{lineno}: {exc}") from exc
        try:
            candles.append(Candle(ts, o, h, l, c, v))
        except OhlcViolation as exc:
            raise OhlcViolation(f"{path}:{lineno}: {exc}") from exc

    candles.sort(key=lambda c: c.ts)
    step = interval * 1000
    has_gaps = False
    for prev, cur in zip(candles, candles[1:]):
        if cur.ts == prev.ts:
            raise DuplicateTimestamp(f"{path}: duplicate timestamp {cur.ts}")
        if cur.ts - prev.ts != step:
            if not allow_gaps:
                raise GapDetected(
                    f"{path}: missing bar between {prev.ts} and {cur.ts} at interval {interval}s"
                )
            has_gaps = True
    if has_gaps:
        logger.warning("%s: gaps present, series marked has_gaps", path)
    return CandleSeries(symbol=symbol, interval=interval, candles=tuple(candles), has_gaps=has_gaps)


def write_csv(series: CandleSeries, path: str | Path) -> None:
    """Write a series in the warehouse CSV format (repr floats, int ms)."""
    path = Path(path)
    rows = [CSV_HEADER]
    for c in series.candles:
        rows.append(f"{c.ts},{c.open!r},{c.high!r},{c.low!r},{c.close!r},{c.volume!r}")
    path.write_text("\n".join(rows) + "\n")


def slice_window(series: CandleSeries, from_ts: int, to_ts: int) -> CandleSeries:
    """Return the contiguous sub-series with from_ts <= ts <= to_ts."""
    if from_ts > to_ts:
        raise ValidationError(f"from_ts {from_ts} > to_ts {to_ts}")
    picked = tuple(c for c in series.candles if from_ts <= c.ts <= to_ts)
    if not picked:
        raise EmptyWindow(f"{series.symbol}: no candles in [{from_ts}, {to_ts}]")
    return CandleSeries(series.symbol, series.interval, picked, has_gaps=series.has_gaps)


def resample(series: CandleSeries, factor: int) -> CandleSeries:
    """Aggregate every ``factor`` consecutive bars into one wider bar.

    open = first open, close = last close, high = max, low = min,
    volume = sum; a trailing partial group is dropped.
    """
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    if series.has_gaps:
        raise ValidationError(f"{series.symbol}: cannot resample a series with gaps")
    if len(series) < factor:
        raise EmptyResult(f"{series.symbol}: {len(series)} bars is shorter than factor {factor}")
    if factor == 1:
        return series
    out = []
    candles = series.candles
    for start in range(0, len(candles) - factor + 1, factor):
        group = candles[start:start + factor]
        out.append(
            Candle(
                ts=group[0].ts,
                open=group[0].open,
                high=max(c.high for c in group),
                low=min(c.low for c in group),
                close=group[-1].close,
                volume=sum(c.volume for c in group),
            )
        )
    return CandleSeries(series.symbol, series.interval * factor, tuple(out))


def warehouse_csv_path(root: str | Path, symbol: str, interval: int) -> Path:
    return Path(root) / symbol / f"{interval}.csv"


def warehouse_meta_path(root: str | Path, symbol: str, interval: int) -> Path:
    return Path(root) / symbol / f"{interval}.meta.json"


def ingest(csv_path: str | Path, root: str | Path, symbol: str, interval: int,
           allow_gaps: bool = False, source: str = "csv") -> DatasetMeta:
    """Validate an input CSV and store it in the warehouse layout.

    Writes are atomic: the target files only appear once the whole input has
    validated, so a bad row never leaves a partial warehouse entry.
    """
    series = parse_csv(csv_path, symbol, interval, allow_gaps=allow_gaps)
    meta = DatasetMeta.for_series(series, source=source)
    target = warehouse_csv_path(root, symbol, interval)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(".csv.tmp")
    write_csv(series, tmp)
    os.replace(tmp, target)
    meta_target = warehouse_meta_path(root, symbol, interval)
    meta_tmp = meta_target.with_suffix(".json.tmp")
    meta_tmp.write_text(
        json.dumps(
            {
                "source": meta.source,
                "symbol": meta.symbol,
                "interval": meta.interval,
                "first_ts": meta.first_ts,
                "last_ts": meta.last_ts,
                "bar_count": meta.bar_count,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        + "\n"
    )
    os.replace(meta_tmp, meta_target)
    return meta


def load_warehouse(root: str | Path, symbol: str, interval: int,
                   allow_gaps: bool = False) -> CandleSeries:
    """Load a previously ingested series from the warehouse."""
    path = warehouse_csv_path(root, symbol, interval)
    if not path.exists():
        raise ValidationError(f"no warehoused data at {path}")
    return parse_csv(path, symbol, interval, allow_gaps=allow_gaps)
