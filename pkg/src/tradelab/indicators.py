"""Technical-analysis indicators over candle series.

Every indicator is implemented as a small streaming object that consumes one
candle at a time, so strategies can update values incrementally during a
backtest without recomputing history. The batch functions below simply run a
fresh stream over a series and collect the outputs.

Warm-up is explicit: outputs carry ``None`` until enough history has
accumulated, never zeros. Conventions locked here (the usual published ones):

* EMA uses multiplier 2/(p+1) and is seeded with the SMA of the first p closes.
* RSI, ATR and ADX use Wilder smoothing (alpha = 1/p, seeded by a plain mean).
* RSI/MFI with zero losses/outflow read 100; with no movement at all, 50.
* CCI uses the 0.015 constant and mean absolute deviation; zero deviation -> 0.
* Williams %R reads 0 when the window is flat (close equals the window high).
* KST is the conventional 10/15/20/30 ROC blend smoothed over 10/10/10/15
  bars with weights 1..4.
* VPVR is windowed: each bar reports the traded volume in its own price
  bucket over the trailing window, bucketing by typical price.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .data import Candle, CandleSeries
from .errors import ValidationError


class UnknownIndicator(ValidationError):
    """The indicator name is not in the registry."""


class PeriodExceedsSeries(ValidationError):
    """The series is too short for the requested period."""


class InvalidPeriods(ValidationError):
    """Period parameters are inconsistent (e.g. MACD fast >= slow)."""


@dataclass(frozen=True)
class IndicatorSpec:
    """A named indicator plus its parameter map."""

    name: str
    params: dict[str, float] = field(default_factory=dict)

    def label(self) -> str:
        if not self.params:
            return self.name
        parts = "_".join(str(self.params[k]) for k in sorted(self.params))
        return f"{self.name}_{parts}"


@dataclass
class IndicatorOutput:
    """Per-bar values aligned with the input series.

    ``values[i]`` is ``None`` for every i < warmup and a float from warmup
    onward; there are never interior holes.
    """

    values: list[float | None]
    warmup: int

    def __len__(self) -> int:
        return len(self.values)

    def defined(self) -> list[float]:
        return [v for v in self.values[self.warmup:]]


def _require_period(p, name="p"):
    p = int(p)
    if p < 1:
        raise InvalidPeriods(f"{name} must be >= 1, got {p}")
    return p


# ---------------------------------------------------------------------------
# Streaming primitives
# ---------------------------------------------------------------------------

class _WilderAvg:
    """Wilder recursive average: mean of the first p values, then
    (prev*(p-1) + x)/p."""

    __slots__ = ("p", "_buf", "value")

    def __init__(self, p: int):
        self.p = p
        self._buf: list[float] = []
        self.value: float | None = None

    def push(self, x: float) -> float | None:
        if self.value is None:
            self._buf.append(x)
            if len(self._buf) == self.p:
                self.value = sum(self._buf) / self.p
                self._buf.clear()
            return self.value
        self.value = (self.value * (self.p - 1) + x) / self.p
        return self.value


class _EmaAvg:
    """EMA over pushed scalars, seeded with the SMA of the first p values."""

    __slots__ = ("p", "k", "_buf", "value")

    def __init__(self, p: int):
        self.p = p
        self.k = 2.0 / (p + 1)
        self._buf: list[float] = []
        self.value: float | None = None

    def push(self, x: float) -> float | None:
        if self.value is None:
            self._buf.append(x)
            if len(self._buf) == self.p:
                self.value = sum(self._buf) / self.p
                self._buf.clear()
            return self.value
        self.value = self.k * x + (1.0 - self.k) * self.value
        return self.value


# ---------------------------------------------------------------------------
# Indicator streams: push(candle) -> value(s) or None while warming up
# ---------------------------------------------------------------------------

class SmaStream:
    def __init__(self, p: int):
        self.p = p
        self._win: deque[float] = deque(maxlen=p)

    def push(self, candle: Candle) -> float | None:
        self._win.append(candle.close)
        if len(self._win) < self.p:
            return None
        return sum(self._win) / self.p


class EmaStream:
    def __init__(self, p: int):
        self._ema = _EmaAvg(p)

    def push(self, candle: Candle) -> float | None:
        return self._ema.push(candle.close)


class RsiStream:
    def __init__(self, p: int):
        self._gain = _WilderAvg(p)
        self._loss = _WilderAvg(p)
        self._prev_close: float | None = None

    def push(self, candle: Candle) -> float | None:
        prev = self._prev_close
        self._prev_close = candle.close
        if prev is None:
            return None
        delta = candle.close - prev
        avg_gain = self._gain.push(delta if delta > 0 else 0.0)
        avg_loss = self._loss.push(-delta if delta < 0 else 0.0)
        if avg_gain is None or avg_loss is None:
            return None
        if avg_loss == 0.0:
            return 50.0 if avg_gain == 0.0 else 100.0
        return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


class AtrStream:
    def __init__(self, p: int):
        self._atr = _WilderAvg(p)
        self._prev_close: float | None = None

    def push(self, candle: Candle) -> float | None:
        prev = self._prev_close
        self._prev_close = candle.close
        if prev is None:
            return None
        tr = max(candle.high - candle.low, abs(candle.high - prev), abs(candle.low - prev))
        return self._atr.push(tr)


class MacdStream:
    """Returns (macd_line, signal_line, histogram); components are None
    until their own warm-up is met."""

    def __init__(self, fast: int, slow: int, signal: int):
        if fast >= slow:
            raise InvalidPeriods(f"fast period {fast} must be < slow period {slow}")
        self._fast = _EmaAvg(fast)
        self._slow = _EmaAvg(slow)
        self._signal = _EmaAvg(signal)

    def push(self, candle: Candle):
        f = self._fast.push(candle.close)
        s = self._slow.push(candle.close)
        if f is None or s is None:
            return (None, None, None)
        macd = f - s
        sig = self._signal.push(macd)
        if sig is None:
            return (macd, None, None)
        return (macd, sig, macd - sig)


class BollingerStream:
    """Returns (upper, middle, lower) using the population deviation."""

    def __init__(self, p: int, k: float):
        if p < 2:
            raise InvalidPeriods(f"bollinger period must be >= 2, got {p}")
        if k <= 0:
            raise InvalidPeriods(f"band width multiplier must be > 0, got {k}")
        self.p = p
        self.k = k
        self._win: deque[float] = deque(maxlen=p)

    def push(self, candle: Candle):
        self._win.append(candle.close)
        if len(self._win) < self.p:
            return (None, None, None)
        mean = sum(self._win) / self.p
        var = sum((x - mean) ** 2 for x in self._win) / self.p
        dev = self.k * math.sqrt(var)
        return (mean + dev, mean, mean - dev)


class ObvStream:
    def __init__(self):
        self.value = 0.0
        self._prev_close: float | None = None

    def push(self, candle: Candle) -> float:
        prev = self._prev_close
        self._prev_close = candle.close
        if prev is None:
            return self.value
        if candle.close > prev:
            self.value += candle.volume
        elif candle.close < prev:
            self.value -= candle.volume
        return self.value


class MomentumStream:
    def __init__(self, p: int):
        self.p = p
        self._win: deque[float] = deque(maxlen=p + 1)

    def push(self, candle: Candle) -> float | None:
        self._win.append(candle.close)
        if len(self._win) <= self.p:
            return None
        return self._win[-1] - self._win[0]


class ForceIndexStream:
    """EMA-smoothed (close change * volume)."""

    def __init__(self, p: int):
        self._ema = _EmaAvg(p)
        self._prev_close: float | None = None

    def push(self, candle: Candle) -> float | None:
        prev = self._prev_close
        self._prev_close = candle.close
        if prev is None:
            return None
        return self._ema.push((candle.close - prev) * candle.volume)


class MfiStream:
    """Money Flow Index over typical-price flows.

    A bar with unchanged typical price contributes to neither flow; zero
    negative flow reads 100, and a window with no flow at all reads 50.
    """

    def __init__(self, p: int):
        self.p = p
        self._flows: deque[tuple[float, float]] = deque(maxlen=p)
        self._prev_tp: float | None = None

    def push(self, candle: Candle) -> float | None:
        tp = (candle.high + candle.low + candle.close) / 3.0
        prev = self._prev_tp
        self._prev_tp = tp
        if prev is None:
            return None
        flow = tp * candle.volume
        if tp > prev:
            self._flows.append((flow, 0.0))
        elif tp < prev:
            self._flows.append((0.0, flow))
        else:
            self._flows.append((0.0, 0.0))
        if len(self._flows) < self.p:
            return None
        pos = sum(f[0] for f in self._flows)
        neg = sum(f[1] for f in self._flows)
        if neg == 0.0:
            return 50.0 if pos == 0.0 else 100.0
        return 100.0 - 100.0 / (1.0 + pos / neg)


class CciStream:
    def __init__(self, p: int):
        self.p = p
        self._win: deque[float] = deque(maxlen=p)

    def push(self, candle: Candle) -> float | None:
        tp = (candle.high + candle.low + candle.close) / 3.0
        self._win.append(tp)
        if len(self._win) < self.p:
            return None
        mean = sum(self._win) / self.p
        mad = sum(abs(x - mean) for x in self._win) / self.p
        if mad == 0.0:
            return 0.0
        return (tp - mean) / (0.015 * mad)


class WilliamsRStream:
    def __init__(self, p: int):
        self.p = p
        self._highs: deque[float] = deque(maxlen=p)
        self._lows: deque[float] = deque(maxlen=p)

    def push(self, candle: Candle) -> float | None:
        self._highs.append(candle.high)
        self._lows.append(candle.low)
        if len(self._highs) < self.p:
            return None
        hh = max(self._highs)
        ll = min(self._lows)
        if hh == ll:
            return 0.0
        return -100.0 * (hh - candle.close) / (hh - ll)


class AdxStream:
    """Average Directional Index via Wilder-smoothed +DM/-DM/TR then
    Wilder-smoothed DX; first value appears at index 2p-1."""

    def __init__(self, p: int):
        self._tr = _WilderAvg(p)
        self._pos_dm = _WilderAvg(p)
        self._neg_dm = _WilderAvg(p)
        self._adx = _WilderAvg(p)
        self._prev: Candle | None = None

    def push(self, candle: Candle) -> float | None:
        prev = self._prev
        self._prev = candle
        if prev is None:
            return None
        up = candle.high - prev.high
        down = prev.low - candle.low
        pos_dm = up if (up > down and up > 0) else 0.0
        neg_dm = down if (down > up and down > 0) else 0.0
        tr = max(candle.high - candle.low, abs(candle.high - prev.close), abs(candle.low - prev.close))
        tr_s = self._tr.push(tr)
        pos_s = self._pos_dm.push(pos_dm)
        neg_s = self._neg_dm.push(neg_dm)
        if tr_s is None:
            return None
        if tr_s == 0.0:
            pos_di = neg_di = 0.0
        else:
            pos_di = 100.0 * pos_s / tr_s
            neg_di = 100.0 * neg_s / tr_s
        di_sum = pos_di + neg_di
        dx = 0.0 if di_sum == 0.0 else 100.0 * abs(pos_di - neg_di) / di_sum
        return self._adx.push(dx)


KST_ROC_PERIODS = (10, 15, 20, 30)
KST_SMOOTH_PERIODS = (10, 10, 10, 15)
KST_WEIGHTS = (1.0, 2.0, 3.0, 4.0)


class KstStream:
    """Know Sure Thing: weighted sum of four SMA-smoothed rates of change."""

    def __init__(self):
        self._closes: deque[float] = deque(maxlen=max(KST_ROC_PERIODS) + 1)
        self._smooth = [deque(maxlen=m) for m in KST_SMOOTH_PERIODS]

    def push(self, candle: Candle) -> float | None:
        self._closes.append(candle.close)
        n_close = len(self._closes)
        ready = True
        for roc_p, win in zip(KST_ROC_PERIODS, self._smooth):
            if n_close > roc_p:
                roc = 100.0 * (self._closes[-1] / self._closes[-1 - roc_p] - 1.0)
                win.append(roc)
            if len(win) < win.maxlen:
                ready = False
        if not ready:
            return None
        total = 0.0
        for weight, win in zip(KST_WEIGHTS, self._smooth):
            total += weight * (sum(win) / len(win))
        return total


class VpvrStream:
    """Volume-by-price over a trailing window.

    The window's typical-price range is split into ``buckets`` equal bins;
    each bar's full volume lands in the bin of its typical price. The output
    at bar i is the accumulated volume in bar i's own bin. A flat window
    degenerates to a single bin holding the whole window volume.
    """

    def __init__(self, p: int, buckets: int):
        if buckets < 1:
            raise InvalidPeriods(f"bucket count must be >= 1, got {buckets}")
        self.p = p
        self.buckets = buckets
        self._win: deque[tuple[float, float]] = deque(maxlen=p)

    def push(self, candle: Candle) -> float | None:
        tp = (candle.high + candle.low + candle.close) / 3.0
        self._win.append((tp, candle.volume))
        if len(self._win) < self.p:
            return None
        return self.profile_value(tp)

    def profile_value(self, tp: float) -> float:
        lo = min(t for t, _ in self._win)
        hi = max(t for t, _ in self._win)
        if hi == lo:
            return sum(v for _, v in self._win)
        width = (hi - lo) / self.buckets
        mine = min(int((tp - lo) / width), self.buckets - 1)
        total = 0.0
        for t, v in self._win:
            b = min(int((t - lo) / width), self.buckets - 1)
            if b == mine:
                total += v
        return total


def volume_profile(series: CandleSeries, buckets: int) -> list[tuple[float, float, float]]:
    """Whole-series volume-by-price histogram as (low_edge, high_edge, volume)."""
    if buckets < 1:
        raise InvalidPeriods(f"bucket count must be >= 1, got {buckets}")
    if not series.candles:
        return []
    tps = [(c.high + c.low + c.close) / 3.0 for c in series.candles]
    lo, hi = min(tps), max(tps)
    vols = [0.0] * buckets
    if hi == lo:
        vols[0] = sum(series.volumes)
        return [(lo, hi, vols[0])] + [(hi, hi, 0.0)] * (buckets - 1)
    width = (hi - lo) / buckets
    for tp, c in zip(tps, series.candles):
        b = min(int((tp - lo) / width), buckets - 1)
        vols[b] += c.volume
    return [(lo + i * width, lo + (i + 1) * width, v) for i, v in enumerate(vols)]


# ---------------------------------------------------------------------------
# Batch API
# ---------------------------------------------------------------------------

def _run_stream(stream, series: CandleSeries) -> IndicatorOutput:
    values: list[float | None] = []
    warmup = None
    for i, candle in enumerate(series.candles):
        v = stream.push(candle)
        values.append(v)
        if v is not None and warmup is None:
            warmup = i
    return IndicatorOutput(values, warmup if warmup is not None else len(values))


def _run_multi(stream, series: CandleSeries, n: int) -> tuple[IndicatorOutput, ...]:
    cols: list[list[float | None]] = [[] for _ in range(n)]
    for candle in series.candles:
        out = stream.push(candle)
        for col, v in zip(cols, out):
            col.append(v)
    outs = []
    for col in cols:
        warmup = next((i for i, v in enumerate(col) if v is not None), len(col))
        outs.append(IndicatorOutput(col, warmup))
    return tuple(outs)


def _check_length(series: CandleSeries, needed: int, name: str) -> None:
    if len(series) < needed:
        raise PeriodExceedsSeries(
            f"{name}: needs at least {needed} bars, series has {len(series)}"
        )


def sma(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p, f"sma({p})")
    return _run_stream(SmaStream(p), series)


def ema(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p, f"ema({p})")
    return _run_stream(EmaStream(p), series)


def rsi(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p + 1, f"rsi({p})")
    return _run_stream(RsiStream(p), series)


def atr(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p + 1, f"atr({p})")
    return _run_stream(AtrStream(p), series)


def macd(series: CandleSeries, fast: int, slow: int, signal: int
         ) -> tuple[IndicatorOutput, IndicatorOutput, IndicatorOutput]:
    fast = _require_period(fast, "fast")
    slow = _require_period(slow, "slow")
    signal = _require_period(signal, "signal")
    if fast >= slow:
        raise InvalidPeriods(f"fast period {fast} must be < slow period {slow}")
    _check_length(series, slow + signal - 1, f"macd({fast},{slow},{signal})")
    return _run_multi(MacdStream(fast, slow, signal), series, 3)


def bollinger(series: CandleSeries, p: int, k: float
              ) -> tuple[IndicatorOutput, IndicatorOutput, IndicatorOutput]:
    p = _require_period(p)
    _check_length(series, p, f"bollinger({p})")
    return _run_multi(BollingerStream(p, k), series, 3)


def obv(series: CandleSeries) -> IndicatorOutput:
    _check_length(series, 1, "obv")
    return _run_stream(ObvStream(), series)


def momentum(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p + 1, f"momentum({p})")
    return _run_stream(MomentumStream(p), series)


def force_index(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p + 1, f"force_index({p})")
    return _run_stream(ForceIndexStream(p), series)


def mfi(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p + 1, f"mfi({p})")
    return _run_stream(MfiStream(p), series)


def cci(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p, f"cci({p})")
    return _run_stream(CciStream(p), series)


def williams_r(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p, f"williams_r({p})")
    return _run_stream(WilliamsRStream(p), series)


def adx(series: CandleSeries, p: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, 2 * p, f"adx({p})")
    return _run_stream(AdxStream(p), series)


def kst(series: CandleSeries) -> IndicatorOutput:
    _check_length(series, 45, "kst")
    return _run_stream(KstStream(), series)


def vpvr(series: CandleSeries, p: int, buckets: int) -> IndicatorOutput:
    p = _require_period(p)
    _check_length(series, p, f"vpvr({p})")
    return _run_stream(VpvrStream(p, buckets), series)


# ---------------------------------------------------------------------------
# Registry: name -> (stream factory, required params, output labels)
# ---------------------------------------------------------------------------

def _int_params(params: dict, *names: str) -> list[int]:
    out = []
    for n in names:
        if n not in params:
            raise UnknownIndicator(f"missing parameter '{n}'")
        out.append(_require_period(params[n], n))
    return out


_REGISTRY: dict[str, dict] = {
    "sma": {"factory": lambda pr: SmaStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"])},
    "ema": {"factory": lambda pr: EmaStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"])},
    "rsi": {"factory": lambda pr: RsiStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"]) + 1},
    "atr": {"factory": lambda pr: AtrStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"]) + 1},
    "macd": {
        "factory": lambda pr: MacdStream(*_int_params(pr, "fast", "slow", "signal")),
        "lines": ("line", "signal", "hist"),
        "min_len": lambda pr: int(pr["slow"]) + int(pr["signal"]) - 1,
    },
    "bollinger": {
        "factory": lambda pr: BollingerStream(_int_params(pr, "p")[0], float(pr.get("k", 2.0))),
        "lines": ("upper", "middle", "lower"),
        "min_len": lambda pr: int(pr["p"]),
    },
    "obv": {"factory": lambda pr: ObvStream(), "lines": ("",), "min_len": lambda pr: 1},
    "momentum": {"factory": lambda pr: MomentumStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"]) + 1},
    "force_index": {"factory": lambda pr: ForceIndexStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"]) + 1},
    "mfi": {"factory": lambda pr: MfiStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"]) + 1},
    "cci": {"factory": lambda pr: CciStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"])},
    "williams_r": {"factory": lambda pr: WilliamsRStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: int(pr["p"])},
    "adx": {"factory": lambda pr: AdxStream(*_int_params(pr, "p")), "lines": ("",), "min_len": lambda pr: 2 * int(pr["p"])},
    "kst": {"factory": lambda pr: KstStream(), "lines": ("",), "min_len": lambda pr: 45},
    "vpvr": {
        "factory": lambda pr: VpvrStream(_int_params(pr, "p")[0], _int_params(pr, "buckets")[0]),
        "lines": ("",),
        "min_len": lambda pr: int(pr["p"]),
    },
}

INDICATOR_NAMES = tuple(sorted(_REGISTRY))


def spec_lines(spec: IndicatorSpec) -> tuple[str, ...]:
    """Output-line suffixes for a spec ('' for single-line indicators)."""
    if spec.name not in _REGISTRY:
        raise UnknownIndicator(f"unknown indicator '{spec.name}'")
    return _REGISTRY[spec.name]["lines"]


def make_stream(spec: IndicatorSpec):
    """Build a fresh streaming instance for a spec."""
    if spec.name not in _REGISTRY:
        raise UnknownIndicator(f"unknown indicator '{spec.name}'")
    try:
        return _REGISTRY[spec.name]["factory"](spec.params)
    except KeyError as exc:
        raise UnknownIndicator(f"{spec.name}: missing parameter {exc}") from exc


def compute(spec: IndicatorSpec, series: CandleSeries):
    """Compute any registered indicator; returns one IndicatorOutput or a
    tuple of them for multi-line indicators."""
    if spec.name not in _REGISTRY:
        raise UnknownIndicator(f"unknown indicator '{spec.name}'")
    entry = _REGISTRY[spec.name]
    stream = make_stream(spec)
    try:
        needed = entry["min_len"](spec.params)
    except KeyError as exc:
        raise UnknownIndicator(f"{spec.name}: missing parameter {exc}") from exc
    _check_length(series, needed, spec.label())
    n = len(entry["lines"])
    if n == 1:
        return _run_stream(stream, series)
    return _run_multi(stream, series, n)
